#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "detox/ablation.hpp"
#include "detox/bundle.hpp"
#include "detox/condbert.hpp"
#include "detox/error.hpp"
#include "detox/report.hpp"

namespace detox::service {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------------------------
// Parameter overrides

namespace detail {

inline bool same_kind(const json& base, const json& value) {
    if (base.is_boolean()) return value.is_boolean();
    if (base.is_number_unsigned()) return value.is_number_unsigned() || (value.is_number_integer() && value.get<long long>() >= 0);
    if (base.is_number()) return value.is_number();
    if (base.is_object()) return value.is_object();
    return base.type() == value.type();
}

inline void patch(json& base, const json& overrides, const std::string& path) {
    if (!overrides.is_object()) throw InvalidArgument("params" + path + " must be an object");
    for (const auto& [key, value] : overrides.items()) {
        const std::string where = path + "." + key;
        if (!base.contains(key)) throw InvalidArgument("unknown parameter 'params" + where + "'");
        auto& slot = base[key];
        if (!same_kind(slot, value)) throw InvalidArgument("parameter 'params" + where + "' has the wrong type");
        if (slot.is_object()) patch(slot, value, where);
        else slot = value;
    }
}

} // namespace detail

/// Defaults with a partial override in the shape of the defaults JSON, e.g. {"fusion": {"w": 2}}.
inline EngineDefaults apply_overrides(const EngineDefaults& defaults, const json& overrides) {
    if (overrides.is_null()) return defaults;
    json merged = to_json(defaults);
    detail::patch(merged, overrides, "");
    auto out = defaults_from_json(merged);
    out.fusion.prior = defaults.fusion.prior;
    return out;
}

// ---------------------------------------------------------------------------------------------
// Handlers. Each takes the parsed request body and returns the response body; invalid requests
// throw detox::Error subclasses, which the transport maps to 4xx.

namespace detail {

inline const json& require(const json& req, const char* key) {
    if (!req.is_object()) throw InvalidArgument("request body must be a JSON object");
    if (!req.contains(key)) throw InvalidArgument(std::string("missing field '") + key + "'");
    return req.at(key);
}

inline std::string require_string(const json& req, const char* key) {
    const auto& v = require(req, key);
    if (!v.is_string()) throw InvalidArgument(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline const json& optional_field(const json& req, const char* key) {
    static const json null;
    if (!req.is_object()) throw InvalidArgument("request body must be a JSON object");
    auto it = req.find(key);
    return it == req.end() ? null : *it;
}

inline json token_strings(const TokenIds& ids, const Vocabulary& vocab) {
    json out = json::array();
    for (int id : ids) out.push_back(vocab.token(id));
    return out;
}

inline std::string join(const TokenIds& ids, const Vocabulary& vocab) {
    std::string s;
    for (int id : ids) {
        if (!s.empty()) s.push_back(' ');
        s += vocab.token(id);
    }
    return s;
}

} // namespace detail

inline json handle_health() { return {{"schema_version", kSchemaVersion}, {"status", "ok"}}; }

/// Sentence toxicity from the guide classifier and per-token scores from the lexicon.
inline json handle_score(const ModelBundle& b, const json& req) {
    const auto text = detail::require_string(req, "text");
    const auto pieces = tokenize_with_offsets(text);
    if (pieces.empty()) throw InvalidArgument("text is empty");
    TokenIds ids;
    json per_token = json::array();
    for (const auto& p : pieces) {
        const int id = b.vocab->id(p.surface);
        ids.push_back(id);
        per_token.push_back({{"token", p.surface}, {"byte_begin", p.begin}, {"byte_end", p.end}, {"score", b.lexicon.score(id)}});
    }
    return {{"schema_version", kSchemaVersion}, {"sentence_toxicity", classify(b.classifier, ids)}, {"per_token", per_token}};
}

/// Replacement candidates per toxic span. An explicit token span overrides the planner.
inline json handle_suggest(const ModelBundle& b, const json& req) {
    const auto text = detail::require_string(req, "text");
    const auto params = apply_overrides(b.defaults, detail::optional_field(req, "params")).editor;
    params.validate();
    if (params.k > 10) throw InvalidArgument("params.editor.k must be <= 10");
    const auto pieces = tokenize_with_offsets(text);
    TokenIds ids;
    for (const auto& p : pieces) ids.push_back(b.vocab->id(p.surface));

    MaskPlan plan;
    const auto& span = detail::optional_field(req, "span");
    if (!span.is_null()) {
        if (!span.is_object() || !span.contains("start") || !span.contains("end") || !span["start"].is_number_unsigned() ||
            !span["end"].is_number_unsigned())
            throw InvalidArgument("span must be {start, end} with non-negative integer token indices");
        const Span s{span["start"].get<std::size_t>(), span["end"].get<std::size_t>()};
        if (s.end <= s.start) throw InvalidArgument("span end must be greater than start");
        if (s.end > ids.size()) throw InvalidArgument("span exceeds the token count (" + std::to_string(ids.size()) + ")");
        plan.push_back(s);
    } else {
        plan = plan_masks(ids, b.lexicon, params);
    }

    json spans = json::array();
    const auto models = condbert_models(b);
    for (const auto& s : plan) {
        json cands = json::array();
        for (const auto& c : span_candidates(s, ids, models, params))
            cands.push_back({{"tokens", detail::token_strings(c.tokens, *b.vocab)},
                             {"text", detail::join(c.tokens, *b.vocab)},
                             {"model_score", c.model_score},
                             {"sim_score", c.sim_score},
                             {"final_score", c.final_score}});
        json original = json::array();
        for (std::size_t i = s.start; i < s.end; ++i) original.push_back(pieces[i].surface);
        spans.push_back({{"start", s.start},
                         {"end", s.end},
                         {"byte_begin", pieces[s.start].begin},
                         {"byte_end", pieces[s.end - 1].end},
                         {"original", original},
                         {"candidates", cands}});
    }
    return {{"schema_version", kSchemaVersion}, {"spans", spans}};
}

/// Full rewrite with the named engine, evaluated against the source.
inline json handle_rewrite(const ModelBundle& b, const json& req) {
    const auto text = detail::require_string(req, "text");
    const auto method = parse_method(detail::require_string(req, "method"));
    const auto params = apply_overrides(b.defaults, detail::optional_field(req, "params"));

    json body{{"schema_version", kSchemaVersion}, {"method", to_string(method)}};
    std::string output;
    if (method == Method::condbert) {
        const auto r = condbert_detoxify(text, condbert_models(b), params.editor);
        output = r.text;
        json edits = json::array();
        for (const auto& e : r.edits)
            edits.push_back({{"start", e.span.start}, {"end", e.span.end}, {"replacement", detail::token_strings(e.replacement, *b.vocab)}});
        body["edits"] = edits;
        body["fallback"] = false;
    } else {
        params.fusion.validate(b.cclm.num_classes());
        if (params.beam.beams < 1) throw InvalidArgument("params.beam.beams must be >= 1");
        const auto r = ParagediEngine(b, params.copy).run(text, params.fusion, params.beam, params.rerank);
        output = r.text;
        body["fallback"] = r.fallback;
    }
    body["output"] = output;
    const auto src = tokenize(text), out = tokenize(output);
    if (src.empty()) {
        body["eval"] = nullptr;
    } else {
        const auto m = eval_models(b);
        body["eval"] = to_json(sentence_eval(src, out, m.classifier, m.emb, m.fluency, b.defaults.eval));
    }
    return body;
}

/// Batch evaluation of {src, out} pairs.
inline json handle_evaluate(const ModelBundle& b, const json& req) {
    const auto& pairs = detail::require(req, "pairs");
    if (!pairs.is_array() || pairs.empty()) throw InvalidArgument("pairs must be a non-empty array");
    std::vector<Tokens> src, out;
    for (const auto& p : pairs) {
        if (!p.is_object() || !p.contains("src") || !p.contains("out") || !p["src"].is_string() || !p["out"].is_string())
            throw InvalidArgument("each pair must be {src: string, out: string}");
        src.push_back(tokenize(p["src"].get<std::string>()));
        out.push_back(tokenize(p["out"].get<std::string>()));
    }
    const auto& name = detail::optional_field(req, "name");
    const auto& seed = detail::optional_field(req, "seed");
    const auto& per_sentence = detail::optional_field(req, "per_sentence");
    if (!name.is_null() && !name.is_string()) throw InvalidArgument("name must be a string");
    if (!seed.is_null() && !seed.is_number_unsigned()) throw InvalidArgument("seed must be a non-negative integer");
    if (!per_sentence.is_null() && !per_sentence.is_boolean()) throw InvalidArgument("per_sentence must be a boolean");
    const auto report = evaluate_system(name.is_null() ? "system" : name.get<std::string>(), src, out, eval_models(b),
                                        b.defaults.eval, seed.is_null() ? 0 : seed.get<std::uint64_t>());
    return to_json(report, per_sentence.is_null() || per_sentence.get<bool>());
}

inline json handle_models(const ModelBundle& b, const std::string& source) {
    json presets_json = json::array();
    for (const auto& p : presets()) presets_json.push_back({{"name", p.name}, {"method", to_string(p.method)}, {"description", p.description}});
    return {{"schema_version", kSchemaVersion},
            {"bundle",
             {{"source", source},
              {"version", kBundleVersion},
              {"vocab_size", b.vocab->size()},
              {"vocab_fingerprint", std::to_string(b.vocab->fingerprint())}}},
            {"methods", {"paragedi", "condbert"}},
            {"presets", presets_json},
            {"defaults", to_json(b.defaults)}};
}

// ---------------------------------------------------------------------------------------------
// Transport

struct Response {
    int status = 200;
    json body;
};

inline json error_body(const std::string& type, const std::string& message) {
    return {{"schema_version", kSchemaVersion}, {"error", {{"type", type}, {"message", message}}}};
}

/// Parses `raw` (unless the handler takes no body), runs the handler and maps failures to status codes.
inline Response dispatch(const std::function<json(const json&)>& handler, const std::string& raw, bool needs_body = true) {
    try {
        json req;
        if (needs_body) {
            try {
                req = json::parse(raw);
            } catch (const json::parse_error& e) {
                return {400, error_body("parse_error", std::string("request body is not valid JSON: ") + e.what())};
            }
        }
        return {200, handler(req)};
    } catch (const InvalidArgument& e) {
        return {400, error_body("invalid_argument", e.what())};
    } catch (const VocabularyMismatch& e) {
        return {422, error_body("vocabulary_mismatch", e.what())};
    } catch (const DegenerateInput& e) {
        return {422, error_body("degenerate_input", e.what())};
    } catch (const json::exception& e) {
        return {400, error_body("invalid_argument", e.what())};
    } catch (const std::exception& e) {
        return {500, error_body("internal", e.what())};
    }
}

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string bundle_dir = "bundle";
    std::size_t threads = 0;  // 0: httplib default pool
};

/// key=value lines; '#' starts a comment; unknown keys are an error.
inline ServiceConfig parse_config(std::istream& in, ServiceConfig config = {}) {
    std::string line;
    std::size_t n = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    while (std::getline(in, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(n, "expected key=value");
        const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        try {
            if (key == "host") config.host = value;
            else if (key == "port") config.port = std::stoi(value);
            else if (key == "bundle") config.bundle_dir = value;
            else if (key == "threads") config.threads = std::stoul(value);
            else throw ParseError(n, "unknown key '" + key + "'");
        } catch (const std::logic_error&) {
            throw ParseError(n, "bad value for '" + key + "'");
        }
    }
    if (config.port < 0 || config.port > 65535) throw InvalidArgument("port must be in [0, 65535]");
    return config;
}

inline ServiceConfig load_config(const std::string& path, ServiceConfig config = {}) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
    return parse_config(in, std::move(config));
}

/// DETOX_PORT and DETOX_BUNDLE take precedence over the file.
inline ServiceConfig apply_env(ServiceConfig config) {
    if (const char* port = std::getenv("DETOX_PORT")) {
        try {
            config.port = std::stoi(port);
        } catch (const std::logic_error&) {
            throw InvalidArgument("DETOX_PORT is not a number");
        }
        if (config.port < 0 || config.port > 65535) throw InvalidArgument("DETOX_PORT must be in [0, 65535]");
    }
    if (const char* dir = std::getenv("DETOX_BUNDLE")) config.bundle_dir = dir;
    return config;
}

/// HTTP server over a shared immutable bundle. reload() swaps the bundle atomically; in-flight requests
/// keep the one they started with.
class Server {
public:
    Server(std::shared_ptr<const ModelBundle> bundle, std::string source) : bundle_(std::move(bundle)), source_(std::move(source)) {
        route_get("/health", [](const ModelBundle&, const json&) { return handle_health(); });
        route_get("/models", [this](const ModelBundle& b, const json&) { return handle_models(b, current_source()); });
        route_post("/score", handle_score);
        route_post("/suggest", handle_suggest);
        route_post("/rewrite", handle_rewrite);
        route_post("/evaluate", handle_evaluate);
    }

    void reload(std::shared_ptr<const ModelBundle> bundle, std::string source) {
        std::lock_guard lock(mutex_);
        bundle_ = std::move(bundle);
        source_ = std::move(source);
    }

    std::shared_ptr<const ModelBundle> bundle() const {
        std::lock_guard lock(mutex_);
        return bundle_;
    }

    void set_threads(std::size_t n) {
        if (n > 0) http_.new_task_queue = [n] { return new httplib::ThreadPool(n); };
    }

    bool listen(const std::string& host, int port) { return http_.listen(host, port); }
    /// Binds an ephemeral port and returns it (or -1); call listen_after_bind() to serve.
    int bind_any(const std::string& host) { return http_.bind_to_any_port(host); }
    bool listen_after_bind() { return http_.listen_after_bind(); }
    void stop() { http_.stop(); }
    bool running() const { return http_.is_running(); }
    void wait_until_ready() const { http_.wait_until_ready(); }

private:
    using Handler = std::function<json(const ModelBundle&, const json&)>;

    std::string current_source() const {
        std::lock_guard lock(mutex_);
        return source_;
    }

    static void write(httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    void route_get(const std::string& path, Handler h) {
        http_.Get(path, [this, h](const httplib::Request&, httplib::Response& res) {
            const auto b = bundle();
            write(res, dispatch([&](const json& req) { return h(*b, req); }, "", false));
        });
    }

    void route_post(const std::string& path, Handler h) {
        http_.Post(path, [this, h](const httplib::Request& req, httplib::Response& res) {
            const auto b = bundle();
            write(res, dispatch([&](const json& body) { return h(*b, body); }, req.body));
        });
    }

    mutable std::mutex mutex_;
    std::shared_ptr<const ModelBundle> bundle_;
    std::string source_;
    httplib::Server http_;
};

} // namespace detox::service
