#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "detox/classifier.hpp"
#include "detox/embeddings.hpp"
#include "detox/ngram.hpp"
#include "detox/text.hpp"

namespace detox {

// ---------------------------------------------------------------------------------------------
// Fluency stand-ins

/// Features for the acceptability classifier: unigrams plus adjacent-pair bigrams ("a|b"), so word
/// order is visible to a bag-of-words model.
inline Tokens fluency_features(const Tokens& tokens) {
    Tokens out = tokens;
    std::string prev = "<s>";
    for (const auto& t : tokens) {
        out.push_back(prev + "|" + t);
        prev = t;
    }
    out.push_back(prev + "|</s>");
    return out;
}

inline const std::vector<std::string>& acceptability_classes() {
    static const std::vector<std::string> classes{"unacceptable", "acceptable"};
    return classes;
}

/// Trains the acceptability classifier on a corpus labeled unacceptable/acceptable.
inline BowClassifier train_fluency_classifier(const LabeledCorpus& corpus, const BowTrainParams& hp = {}) {
    LabeledCorpus featurized{corpus.classes, {}};
    for (const auto& r : corpus.records) featurized.records.push_back({r.label, fluency_features(r.tokens)});
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(featurized.sentences(), 1));
    return train_bow(featurized, vocab, hp);
}

enum class FluencyMethod { classifier, lm_threshold };

/// Binary per-sentence fluency.
struct FluencyScorer {
    FluencyMethod method = FluencyMethod::lm_threshold;
    const NgramLM* lm = nullptr;            // lm_threshold: fluent iff per-token NLL <= tau
    double tau = 4.0;
    const BowClassifier* acceptability = nullptr;  // classifier: fluent iff P(acceptable) >= 0.5

    double operator()(const Tokens& tokens) const {
        if (tokens.empty()) return 0.0;
        if (method == FluencyMethod::classifier) {
            if (!acceptability) throw InvalidArgument("fluency: classifier mode without a classifier");
            return classify(*acceptability, fluency_features(tokens)) >= 0.5 ? 1.0 : 0.0;
        }
        if (!lm) throw InvalidArgument("fluency: lm-threshold mode without a language model");
        return lm->per_token_nll(lm->vocabulary().encode(tokens)) <= tau ? 1.0 : 0.0;
    }
};

// ---------------------------------------------------------------------------------------------
// Sentence- and system-level style transfer scores

struct EvalParams {
    int target_class = kNeutral;
    double content_threshold = 0.5;  // t_delta: minimum similarity of a successful transfer
    double fluency_floor = 0.5;      // t_psi: minimum fluency of a successful transfer
};

struct SentenceEval {
    double acc = 0;       // 1 iff the classifier assigns the target class
    double acc_soft = 0;  // classifier probability of the target class
    double sim = 0;
    double fl = 0;
    double j = 0;  // acc * sim * fl

    /// Style matches, content and fluency clear their thresholds.
    bool success(const EvalParams& p) const { return acc == 1 && sim >= p.content_threshold && fl >= p.fluency_floor; }
};

inline SentenceEval sentence_eval(const Tokens& src, const Tokens& out, const BowClassifier& clf, const EmbeddingTable& emb,
                                  const FluencyScorer& fluency, const EvalParams& params = {}) {
    const double p_toxic = classify(clf, out);
    const int predicted = p_toxic >= 0.5 ? kToxic : kNeutral;
    SentenceEval e;
    e.acc_soft = params.target_class == kToxic ? p_toxic : 1 - p_toxic;
    e.acc = predicted == params.target_class ? 1.0 : 0.0;
    e.sim = sentence_similarity(src, out, emb);
    e.fl = fluency(out);
    e.j = e.acc * e.sim * e.fl;
    return e;
}

struct JScore {
    double mean = 0;
    double ci_low = 0;
    double ci_high = 0;
    double ci_half_width = 0;
};

/// Mean of per-sentence J with a seeded percentile-bootstrap 95% interval.
inline JScore j_score(std::span<const SentenceEval> evals, std::uint64_t seed = 0, std::size_t resamples = 1000) {
    if (evals.empty()) throw InvalidArgument("j_score: no sentences");
    std::vector<double> js(evals.size());
    std::transform(evals.begin(), evals.end(), js.begin(), [](const SentenceEval& e) { return e.j; });
    JScore out;
    out.mean = std::accumulate(js.begin(), js.end(), 0.0) / static_cast<double>(js.size());
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, js.size() - 1);
    std::vector<double> means(resamples);
    for (auto& m : means) {
        double s = 0;
        for (std::size_t i = 0; i < js.size(); ++i) s += js[pick(rng)];
        m = s / static_cast<double>(js.size());
    }
    std::sort(means.begin(), means.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(means.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, means.size() - 1);
        return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
    };
    out.ci_low = quantile(0.025);
    out.ci_high = quantile(0.975);
    out.ci_half_width = (out.ci_high - out.ci_low) / 2;
    return out;
}

/// Share of source tokens kept, in order, by the output (LCS length / source length).
inline double token_preservation(const Tokens& src, const Tokens& out) {
    if (src.empty()) return 1.0;
    std::vector<std::size_t> prev(out.size() + 1, 0), cur(out.size() + 1, 0);
    for (std::size_t i = 1; i <= src.size(); ++i) {
        for (std::size_t j = 1; j <= out.size(); ++j)
            cur[j] = src[i - 1] == out[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[out.size()]) / static_cast<double>(src.size());
}

// ---------------------------------------------------------------------------------------------
// BLEU

/// Corpus BLEU with brevity penalty. An order n >= 2 with zero clipped matches is smoothed to
/// 1/(total+1); unigram precision is never smoothed.
inline double bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references, int max_n = 4) {
    if (candidates.size() != references.size()) throw InvalidArgument("bleu: candidate and reference counts differ");
    if (max_n < 1) throw InvalidArgument("bleu: max_n must be >= 1");
    std::vector<double> matches(static_cast<std::size_t>(max_n), 0.0), totals(static_cast<std::size_t>(max_n), 0.0);
    double cand_len = 0, ref_len = 0;
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        const auto& c = candidates[s];
        const auto& r = references[s];
        cand_len += static_cast<double>(c.size());
        ref_len += static_cast<double>(r.size());
        for (int n = 1; n <= max_n; ++n) {
            std::map<Tokens, int> ref_counts, cand_counts;
            for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= r.size(); ++i) ++ref_counts[Tokens(r.begin() + i, r.begin() + i + n)];
            for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= c.size(); ++i) ++cand_counts[Tokens(c.begin() + i, c.begin() + i + n)];
            for (const auto& [gram, count] : cand_counts) {
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) matches[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
                totals[static_cast<std::size_t>(n - 1)] += count;
            }
        }
    }
    if (cand_len == 0) return 0.0;
    double log_sum = 0;
    for (int n = 1; n <= max_n; ++n) {
        double m = matches[static_cast<std::size_t>(n - 1)];
        double t = totals[static_cast<std::size_t>(n - 1)];
        if (m == 0) {
            if (n == 1) return 0.0;
            m = 1;
            t += 1;
        }
        log_sum += std::log(m / t);
    }
    const double bp = cand_len >= ref_len ? 1.0 : std::exp(1 - ref_len / cand_len);
    return bp * std::exp(log_sum / max_n);
}

// ---------------------------------------------------------------------------------------------
// Statistics

/// 1-based ranks, ties get the average of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2 + 1;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0 || syy == 0) throw DegenerateInput("correlation undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw InvalidArgument("spearman: length mismatch");
    if (xs.size() < 3) throw InvalidArgument("spearman: need at least 3 points");
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    return pearson(rx, ry);
}

struct TTestResult {
    double t = 0;
    double p = 1;  // two-sided
    double mean_diff = 0;
    std::size_t dof = 0;
};

/// Paired t-test on a - b.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("paired_t_test: length mismatch");
    if (a.size() < 2) throw InvalidArgument("paired_t_test: need at least 2 pairs");
    const double n = static_cast<double>(a.size());
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1));
    if (sd == 0) throw DegenerateInput("paired_t_test: differences have zero variance");
    TTestResult out;
    out.mean_diff = mean;
    out.dof = a.size() - 1;
    out.t = mean / (sd / std::sqrt(n));
    const boost::math::students_t dist(static_cast<double>(out.dof));
    out.p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
    return out;
}

} // namespace detox
