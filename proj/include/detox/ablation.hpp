#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "detox/bundle.hpp"
#include "detox/metrics.hpp"
#include "detox/parallel.hpp"
#include "detox/report.hpp"
#include "detox/synthetic.hpp"
#include "detox/trainable_cclm.hpp"

namespace detox {

enum class Method { paragedi, condbert };

inline const char* to_string(Method m) { return m == Method::paragedi ? "paragedi" : "condbert"; }

inline Method parse_method(const std::string& s) {
    if (s == "paragedi") return Method::paragedi;
    if (s == "condbert") return Method::condbert;
    throw InvalidArgument("unknown method '" + s + "' (expected paragedi or condbert)");
}

/// A fully specified system: engine, its parameters, and optionally a class-conditional LM trained
/// with a given generative/discriminative mix instead of the bundle's count model.
struct SystemConfig {
    std::string name;
    Method method = Method::paragedi;
    EngineDefaults params;
    std::optional<double> cc_lambda;
};

struct Preset {
    std::string name;
    Method method;
    std::string description;
    SystemConfig (*make)(const EngineDefaults&);
};

inline const std::vector<Preset>& presets() {
    static const std::vector<Preset> list{
        {"condbert-full", Method::condbert, "all editor heuristics on",
         [](const EngineDefaults& d) { return SystemConfig{"condbert-full", Method::condbert, d, {}}; }},
        {"mask-all-toxic", Method::condbert, "toxic words are masked without mixing in their neighbors (delta=0)",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"mask-all-toxic", Method::condbert, d, {}};
             c.params.editor.delta = 0;
             return c;
         }},
        {"no-sim-penalty", Method::condbert, "candidates are not reranked by similarity (beta=0)",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-sim-penalty", Method::condbert, d, {}};
             c.params.editor.sim_weight = 0;
             return c;
         }},
        {"no-multiword", Method::condbert, "each span is filled with exactly one word",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-multiword", Method::condbert, d, {}};
             c.params.editor.multiword = false;
             return c;
         }},
        {"no-tox-penalty", Method::condbert, "candidate toxicity is not penalized (p=0)",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-tox-penalty", Method::condbert, d, {}};
             c.params.editor.penalty = 0;
             return c;
         }},
        {"paragedi-full", Method::paragedi, "guided decoding with reranking",
         [](const EngineDefaults& d) { return SystemConfig{"paragedi-full", Method::paragedi, d, {}}; }},
        {"no-reranking", Method::paragedi, "the best-scoring hypothesis is returned as is",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-reranking", Method::paragedi, d, {}};
             c.params.rerank = false;
             return c;
         }},
        {"beam-5", Method::paragedi, "5 beams instead of 10",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"beam-5", Method::paragedi, d, {}};
             c.params.beam.beams = 5;
             return c;
         }},
        {"no-discriminative-loss", Method::paragedi, "class-conditional LM trained with lambda=0",
         [](const EngineDefaults& d) { return SystemConfig{"no-discriminative-loss", Method::paragedi, d, 0.0}; }},
        {"no-generative-loss", Method::paragedi, "class-conditional LM trained with lambda=1",
         [](const EngineDefaults& d) { return SystemConfig{"no-generative-loss", Method::paragedi, d, 1.0}; }},
        {"no-smoothing", Method::paragedi, "no additive smoothing of class likelihoods (alpha=0)",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-smoothing", Method::paragedi, d, {}};
             c.params.fusion.alpha = 0;
             return c;
         }},
        {"no-beam-search", Method::paragedi, "greedy decoding (1 beam)",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-beam-search", Method::paragedi, d, {}};
             c.params.beam.beams = 1;
             return c;
         }},
        {"no-style-control", Method::paragedi, "discriminator exponent w=1",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-style-control", Method::paragedi, d, {}};
             c.params.fusion.w = 1;
             return c;
         }},
        {"no-upper-bound", Method::paragedi, "target posterior is not capped (u=1)",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-upper-bound", Method::paragedi, d, {}};
             c.params.fusion.upper = 1;
             return c;
         }},
        {"no-discriminator", Method::paragedi, "no class guidance (w=0)",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"no-discriminator", Method::paragedi, d, {}};
             c.params.fusion.w = 0;
             return c;
         }},
        {"paraphraser-only", Method::paragedi, "unguided paraphraser: w=0 and no reranking",
         [](const EngineDefaults& d) {
             auto c = SystemConfig{"paraphraser-only", Method::paragedi, d, {}};
             c.params.fusion.w = 0;
             c.params.rerank = false;
             return c;
         }},
    };
    return list;
}

inline const Preset& find_preset(const std::string& name) {
    for (const auto& p : presets())
        if (p.name == name) return p;
    throw InvalidArgument("unknown preset '" + name + "' (see ablate --list)");
}

struct CclmTraining {
    double lr = 2.0;
    int epochs = 200;
};

/// Runs systems over a bundle. Class-conditional LMs trained for a given lambda are cached per runner.
class SystemRunner {
public:
    SystemRunner(const ModelBundle& bundle, const LabeledCorpus* train = nullptr, CclmTraining cclm_training = {})
        : bundle_(&bundle), train_(train), cclm_training_(cclm_training) {}

    std::vector<std::string> run(const SystemConfig& config, const std::vector<std::string>& sources, std::size_t threads = 1) {
        if (config.method == Method::condbert) {
            config.params.editor.validate();
            const auto models = condbert_models(*bundle_);
            return parallel_map(sources.size(), threads,
                                [&](std::size_t i) { return condbert_detoxify(sources[i], models, config.params.editor).text; });
        }
        const ClassConditionalModel* cc = config.cc_lambda ? &trained_cclm(*config.cc_lambda) : nullptr;
        const ParagediEngine engine(*bundle_, config.params.copy, cc);
        return parallel_map(sources.size(), threads, [&](std::size_t i) {
            return engine.run(sources[i], config.params.fusion, config.params.beam, config.params.rerank).text;
        });
    }

    SystemReport evaluate(const SystemConfig& config, const std::vector<std::string>& sources, std::size_t threads = 1,
                          std::uint64_t seed = 0) {
        const auto outputs = run(config, sources, threads);
        std::vector<Tokens> src, out;
        for (std::size_t i = 0; i < sources.size(); ++i) {
            src.push_back(tokenize(sources[i]));
            out.push_back(tokenize(outputs[i]));
        }
        return evaluate_system(config.name, src, out, eval_models(*bundle_), bundle_->defaults.eval, seed);
    }

    const TrainableCCLM& trained_cclm(double lambda) {
        auto it = cclms_.find(lambda);
        if (it != cclms_.end()) return *it->second;
        if (!train_) throw InvalidArgument("presets that retrain the class-conditional LM need a training corpus");
        auto result = train_cclm(*train_, bundle_->vocab, lambda, cclm_training_.lr, cclm_training_.epochs);
        return *cclms_.emplace(lambda, std::make_unique<TrainableCCLM>(std::move(result.model))).first->second;
    }

private:
    const ModelBundle* bundle_;
    const LabeledCorpus* train_;
    CclmTraining cclm_training_;
    std::map<double, std::unique_ptr<TrainableCCLM>> cclms_;
};

/// Reference preset an ablation row is compared against.
inline const char* full_preset(Method m) { return m == Method::paragedi ? "paragedi-full" : "condbert-full"; }

/// Paired difference system - reference on one per-sentence metric. Identical columns give diff 0, p 1.
struct PairedDelta {
    double mean_diff = 0;
    double p = 1;
};

inline PairedDelta paired_delta(const SystemReport& system, const SystemReport& reference, double SentenceEval::*metric) {
    if (system.sentences.size() != reference.sentences.size()) throw InvalidArgument("paired_delta: reports cover different inputs");
    std::vector<double> a, b;
    for (std::size_t i = 0; i < system.sentences.size(); ++i) {
        a.push_back(system.sentences[i].*metric);
        b.push_back(reference.sentences[i].*metric);
    }
    try {
        const auto t = paired_t_test(a, b);
        return {t.mean_diff, t.p};
    } catch (const DegenerateInput&) {
        double diff = 0;
        for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] - b[i];
        return {diff / static_cast<double>(a.size()), diff == 0 ? 1.0 : 0.0};
    }
}

struct AblationRow {
    SystemReport report;
    std::optional<std::string> reference;  // empty for a full system
    PairedDelta acc, sim, fl;
};

/// Runs each config and compares it with the full system of its method (run once if not listed).
inline std::vector<AblationRow> run_ablation(SystemRunner& runner, const std::vector<SystemConfig>& configs, const EngineDefaults& defaults,
                                             const std::vector<std::string>& sources, std::size_t threads, std::uint64_t seed) {
    std::map<std::string, SystemReport> cache;
    auto report_of = [&](const SystemConfig& c) -> const SystemReport& {
        auto it = cache.find(c.name);
        if (it == cache.end()) it = cache.emplace(c.name, runner.evaluate(c, sources, threads, seed)).first;
        return it->second;
    };
    std::vector<AblationRow> rows;
    for (const auto& c : configs) {
        AblationRow row{report_of(c), {}, {}, {}, {}};
        const std::string ref_name = full_preset(c.method);
        if (c.name != ref_name) {
            const auto& ref = report_of(find_preset(ref_name).make(defaults));
            row.reference = ref_name;
            row.acc = paired_delta(row.report, ref, &SentenceEval::acc);
            row.sim = paired_delta(row.report, ref, &SentenceEval::sim);
            row.fl = paired_delta(row.report, ref, &SentenceEval::fl);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::vector<SystemReport> reports;
    for (const auto& r : rows) reports.push_back(r.report);
    std::string out = format_table(reports);
    char buf[256];
    bool header = false;
    for (const auto& r : rows) {
        if (!r.reference) continue;
        if (!header) {
            out += "\npaired differences against the full system (mean diff, p)\n";
            header = true;
        }
        std::snprintf(buf, sizeof buf, "%s vs %s: ACC %+.3f (p=%.3g)  SIM %+.3f (p=%.3g)  FL %+.3f (p=%.3g)\n", r.report.name.c_str(),
                      r.reference->c_str(), r.acc.mean_diff, r.acc.p, r.sim.mean_diff, r.sim.p, r.fl.mean_diff, r.fl.p);
        out += buf;
    }
    return out;
}

inline nlohmann::json to_json(const AblationRow& r) {
    auto j = to_json(r.report, false);
    if (r.reference) {
        auto delta = [](const PairedDelta& d) { return nlohmann::json{{"mean_diff", d.mean_diff}, {"p", d.p}}; };
        j["reference"] = *r.reference;
        j["delta"] = {{"acc", delta(r.acc)}, {"sim", delta(r.sim)}, {"fl", delta(r.fl)}};
    }
    return j;
}

/// The self-contained corpus and the bundle trained on it.
struct SyntheticSetup {
    SyntheticCorpus corpus;
    ModelBundle bundle;
};

inline SyntheticSetup synthetic_setup(std::uint64_t seed = SyntheticOptions{}.seed, const BundleTrainOptions& options = {}) {
    SyntheticOptions so;
    so.seed = seed;
    auto corpus = make_synthetic(so);
    auto bundle = train_bundle(corpus.train, corpus.heldout, options);
    return {std::move(corpus), std::move(bundle)};
}

} // namespace detox
