#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "detox/metrics.hpp"

namespace detox {

/// System-level averages over a set of (source, output) pairs.
struct SystemReport {
    std::string name;
    std::size_t n = 0;
    double acc = 0;
    double acc_soft = 0;
    double sim = 0;
    double fl = 0;
    JScore j;
    double success_rate = 0;
    std::vector<SentenceEval> sentences;
};

struct EvalModels {
    const BowClassifier& classifier;
    const EmbeddingTable& emb;
    FluencyScorer fluency;
};

inline SystemReport evaluate_system(const std::string& name, const std::vector<Tokens>& sources, const std::vector<Tokens>& outputs,
                                    const EvalModels& models, const EvalParams& params = {}, std::uint64_t seed = 0) {
    if (sources.size() != outputs.size()) throw InvalidArgument("evaluate: source and output counts differ");
    if (sources.empty()) throw InvalidArgument("evaluate: nothing to evaluate");
    SystemReport r;
    r.name = name;
    r.n = sources.size();
    double success = 0;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto e = sentence_eval(sources[i], outputs[i], models.classifier, models.emb, models.fluency, params);
        r.acc += e.acc;
        r.acc_soft += e.acc_soft;
        r.sim += e.sim;
        r.fl += e.fl;
        success += e.success(params) ? 1 : 0;
        r.sentences.push_back(e);
    }
    const double n = static_cast<double>(r.n);
    r.acc /= n;
    r.acc_soft /= n;
    r.sim /= n;
    r.fl /= n;
    r.success_rate = success / n;
    r.j = j_score(r.sentences, seed);
    return r;
}

inline nlohmann::json to_json(const SentenceEval& e) {
    return {{"acc", e.acc}, {"acc_soft", e.acc_soft}, {"sim", e.sim}, {"fl", e.fl}, {"j", e.j}};
}

inline nlohmann::json to_json(const SystemReport& r, bool per_sentence = true) {
    nlohmann::json j{{"schema_version", 1},
                     {"name", r.name},
                     {"n", r.n},
                     {"acc", r.acc},
                     {"acc_soft", r.acc_soft},
                     {"sim", r.sim},
                     {"fl", r.fl},
                     {"j", r.j.mean},
                     {"j_ci_half_width", r.j.ci_half_width},
                     {"success_rate", r.success_rate}};
    if (per_sentence) {
        j["sentences"] = nlohmann::json::array();
        for (const auto& e : r.sentences) j["sentences"].push_back(to_json(e));
    }
    return j;
}

/// Aligned columns: name, ACC, SIM, FL, J +- CI half-width.
inline std::string format_table(const std::vector<SystemReport>& reports) {
    std::size_t width = 6;
    for (const auto& r : reports) width = std::max(width, r.name.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %5s  %5s  %5s  %s\n", static_cast<int>(width), "system", "ACC", "SIM", "FL", "J");
    out += buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-*s  %5.2f  %5.2f  %5.2f  %.2f ± %.4f\n", static_cast<int>(width), r.name.c_str(), r.acc, r.sim,
                      r.fl, r.j.mean, r.j.ci_half_width);
        out += buf;
    }
    return out;
}

} // namespace detox
