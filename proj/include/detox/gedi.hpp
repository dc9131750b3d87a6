#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "detox/classifier.hpp"
#include "detox/distribution.hpp"
#include "detox/ngram.hpp"
#include "detox/paraphraser.hpp"
#include "detox/text.hpp"

namespace detox {

/// Knobs of the discriminator correction applied at every decoding step.
struct FusionParams {
    double w = 4.0;       // exponent on the target-class posterior
    double alpha = 0.01;  // added to every class likelihood before normalizing
    double lower = 0.0;   // clamp bounds on the target-class posterior
    double upper = 0.8;
    int target_class = kNeutral;
    std::vector<double> prior;  // empty: use the class-conditional model's prior
    /// Feed the per-token mean of the accumulated class log-likelihood to the posterior instead of the raw
    /// sum. Without it the likelihood of a long prefix underflows next to alpha.
    bool length_normalized = true;

    void validate(std::size_t classes) const {
        if (!(w >= 0)) throw InvalidArgument("fusion: w must be >= 0");
        if (!(alpha >= 0)) throw InvalidArgument("fusion: alpha must be >= 0");
        if (!(lower >= 0 && lower <= upper && upper <= 1)) throw InvalidArgument("fusion: need 0 <= l <= u <= 1");
        if (target_class < 0 || static_cast<std::size_t>(target_class) >= classes) throw InvalidArgument("fusion: target class out of range");
        if (!prior.empty()) check_prior(prior, classes);
    }
};

/// A partial decode. `score` sums fused log-probabilities, `base_logprob` sums the paraphraser's.
struct Hypothesis {
    TokenIds tokens;
    double base_logprob = 0;
    double score = 0;
    std::vector<double> class_loglike;
    bool finished = false;

    /// Ranking score: total fused log-probability per emitted token (EOS included).
    double normalized_score() const { return tokens.empty() ? score : score / static_cast<double>(tokens.size()); }

    /// Tokens with a trailing EOS removed.
    TokenIds content() const {
        TokenIds out = tokens;
        if (!out.empty() && out.back() == Vocabulary::eos) out.pop_back();
        return out;
    }
};

struct BeamParams {
    std::size_t beams = 10;
    std::size_t max_len = 0;  // 0: derive from the source length
    int eos = Vocabulary::eos;
};

/// P_alpha(c) = (alpha + P(c) exp(l_c)) / sum_c' (alpha + P(c') exp(l_c')), evaluated in log space.
/// Writes into `out`, which must have one slot per class.
inline void class_posterior_into(std::span<const double> loglikes, std::span<const double> prior, double alpha,
                                 std::span<double> out) {
    if (!(alpha >= 0)) throw InvalidArgument("class_posterior: alpha must be >= 0");
    if (loglikes.size() != prior.size() || out.size() != prior.size()) throw InvalidArgument("class_posterior: size mismatch");
    const double log_alpha = alpha > 0 ? std::log(alpha) : -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < out.size(); ++c) {
        const double lp = prior[c] > 0 ? std::log(prior[c]) + loglikes[c] : -std::numeric_limits<double>::infinity();
        out[c] = log_add_exp(log_alpha, lp);
    }
    // Ratio form: equal class terms give exactly 1/|C| whatever their magnitude.
    double terms[8];
    std::vector<double> spill;
    double* t = terms;
    if (out.size() > 8) {
        spill.assign(out.begin(), out.end());
        t = spill.data();
    } else {
        std::copy(out.begin(), out.end(), terms);
    }
    for (std::size_t c = 0; c < out.size(); ++c) {
        if (t[c] == -std::numeric_limits<double>::infinity()) {
            out[c] = 0;
            continue;
        }
        double s = 0;
        for (std::size_t d = 0; d < out.size(); ++d) s += std::exp(t[d] - t[c]);
        out[c] = 1 / s;
    }
}

inline std::vector<double> class_posterior(std::span<const double> loglikes, std::span<const double> prior, double alpha) {
    std::vector<double> out(prior.size());
    class_posterior_into(loglikes, prior, alpha, out);
    return out;
}

inline double clamp_posterior(double p, double lower, double upper) { return std::max(lower, std::min(upper, p)); }

/// Everything one decoding step produces: per-class next-token log-probs and the fused distribution.
struct FusedStep {
    std::vector<TokenDistribution> class_logprobs;
    std::vector<double> target_posterior;  // clamped, per candidate token
    TokenDistribution fused;
};

inline FusedStep fuse_step_detail(const TokenDistribution& base, const Hypothesis& hyp, const ClassConditionalModel& cc,
                                  const FusionParams& fp) {
    const std::size_t classes = cc.num_classes();
    fp.validate(classes);
    if (base.size() != cc.vocabulary().size()) throw VocabularyMismatch("fuse_step: distribution size differs from vocabulary");
    const auto& prior = fp.prior.empty() ? cc.prior() : fp.prior;
    std::vector<double> acc = hyp.class_loglike;
    if (acc.empty()) acc.assign(classes, 0.0);
    if (acc.size() != classes) throw InvalidArgument("fuse_step: hypothesis accumulator size differs from class count");

    FusedStep out;
    out.class_logprobs.reserve(classes);
    for (std::size_t c = 0; c < classes; ++c) out.class_logprobs.push_back(cc.next_logprobs(static_cast<int>(c), hyp.tokens));

    const std::size_t v = base.size();
    out.target_posterior.assign(v, 0.0);
    const double length = static_cast<double>(hyp.tokens.size() + 1);
    std::vector<double> ll(classes), post(classes);
    for (std::size_t id = 0; id < v; ++id) {
        for (std::size_t c = 0; c < classes; ++c) {
            ll[c] = acc[c] + out.class_logprobs[c].logprob(id);
            if (fp.length_normalized) ll[c] /= length;
        }
        class_posterior_into(ll, prior, fp.alpha, post);
        out.target_posterior[id] = clamp_posterior(post[static_cast<std::size_t>(fp.target_class)], fp.lower, fp.upper);
    }

    if (fp.w == 0) {
        out.fused = base;
        return out;
    }
    std::vector<double> adj(v);
    for (std::size_t id = 0; id < v; ++id) adj[id] = fp.w * floored_log(out.target_posterior[id]);
    const double top = *std::max_element(adj.begin(), adj.end());
    bool flat = true;
    for (auto& a : adj) {
        a -= top;
        flat &= a == 0;
    }
    // A flat correction carries no signal; keep the base distribution bit for bit.
    if (flat) {
        out.fused = base;
        return out;
    }
    std::vector<double> scores(v);
    for (std::size_t id = 0; id < v; ++id) scores[id] = base.logprob(id) + adj[id];
    out.fused = TokenDistribution::from_scores(std::move(scores));
    return out;
}

/// P(y | prefix, x, c) proportional to P_LM(y | prefix, x) * P_{alpha,l,u}(c | y, prefix)^w.
inline TokenDistribution fuse_step(const TokenDistribution& base, const Hypothesis& hyp, const ClassConditionalModel& cc,
                                   const FusionParams& fp) {
    return fuse_step_detail(base, hyp, cc, fp).fused;
}

/// Tokens the decoder may emit: everything but BOS, UNK and MASK.
inline bool generatable(int id) { return id != Vocabulary::bos && id != Vocabulary::unk && id != Vocabulary::mask; }

/// Length-capped beam search over fused scores. Returns up to `beams` finished hypotheses, best first by
/// normalized score. A hypothesis finishes on EOS or at max_len tokens.
inline std::vector<Hypothesis> beam_search(const TokenIds& source, const Paraphraser& paraphraser, const ClassConditionalModel& cc,
                                           const FusionParams& fp, const BeamParams& bp) {
    if (bp.beams < 1) throw InvalidArgument("beam_search: beams must be >= 1");
    if (bp.max_len < 1) throw InvalidArgument("beam_search: max_len must be >= 1");
    const std::size_t classes = cc.num_classes();
    const std::size_t v = paraphraser.vocabulary().size();

    struct Candidate {
        std::size_t parent;
        int token;
        double score;
    };

    std::vector<Hypothesis> live(1);
    live[0].class_loglike.assign(classes, 0.0);
    std::vector<Hypothesis> finished;
    std::vector<FusedStep> steps;
    std::vector<TokenDistribution> bases;
    std::vector<Candidate> cands;

    for (std::size_t step = 0; step < bp.max_len && !live.empty(); ++step) {
        steps.clear();
        bases.clear();
        cands.clear();
        for (std::size_t i = 0; i < live.size(); ++i) {
            bases.push_back(paraphraser.next_logprobs(source, live[i].tokens));
            steps.push_back(fuse_step_detail(bases.back(), live[i], cc, fp));
            const auto& fused = steps.back().fused;
            for (std::size_t id = 0; id < v; ++id) {
                if (!generatable(static_cast<int>(id))) continue;
                cands.push_back({i, static_cast<int>(id), live[i].score + fused.logprob(id)});
            }
        }
        const std::size_t keep = std::min(bp.beams, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.score != b.score) return a.score > b.score;
                              if (a.parent != b.parent) return a.parent < b.parent;
                              return a.token < b.token;
                          });
        std::vector<Hypothesis> next;
        for (std::size_t k = 0; k < keep; ++k) {
            const auto& cand = cands[k];
            Hypothesis h = live[cand.parent];
            h.tokens.push_back(cand.token);
            h.score = cand.score;
            h.base_logprob += bases[cand.parent].logprob(static_cast<std::size_t>(cand.token));
            for (std::size_t c = 0; c < classes; ++c) h.class_loglike[c] += steps[cand.parent].class_logprobs[c].logprob(static_cast<std::size_t>(cand.token));
            h.finished = cand.token == bp.eos || h.tokens.size() >= bp.max_len;
            (h.finished ? finished : next).push_back(std::move(h));
        }
        live = std::move(next);
    }
    std::stable_sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
        const double sa = a.normalized_score(), sb = b.normalized_score();
        if (sa != sb) return sa > sb;
        return a.tokens < b.tokens;
    });
    if (finished.size() > bp.beams) finished.resize(bp.beams);
    return finished;
}

/// Index of the hypothesis the classifier finds least toxic; ties go to the better normalized score.
inline std::size_t rerank_least_toxic(const std::vector<Hypothesis>& hyps, const BowClassifier& clf) {
    if (hyps.empty()) throw InvalidArgument("rerank: no hypotheses");
    std::size_t best = 0;
    double best_tox = classify(clf, hyps[0].content());
    for (std::size_t i = 1; i < hyps.size(); ++i) {
        const double tox = classify(clf, hyps[i].content());
        if (tox < best_tox || (tox == best_tox && hyps[i].normalized_score() > hyps[best].normalized_score())) {
            best = i;
            best_tox = tox;
        }
    }
    return best;
}

struct ParagediModels {
    const Paraphraser& paraphraser;
    const ClassConditionalModel& cc;
    const BowClassifier* reranker = nullptr;  // null disables reranking
};

struct ParagediResult {
    std::string text;
    bool fallback = false;  // decoding produced nothing usable; the source was returned
};

inline std::size_t default_max_len(std::size_t source_len) { return source_len + source_len / 2 + 4; }

inline ParagediResult paragedi_detoxify(const std::string& text, const ParagediModels& models, const FusionParams& fp,
                                        const BeamParams& bp, const TokenizerConfig& tok = {}) {
    const auto& vocab = models.paraphraser.vocabulary();
    if (!(vocab == models.cc.vocabulary()) || (models.reranker && !(vocab == *models.reranker->vocab)))
        throw VocabularyMismatch("paragedi: paraphraser, class-conditional LM and reranker must share one vocabulary");
    const auto tokens = tokenize(text, tok);
    if (tokens.empty()) return {"", false};

    BeamParams params = bp;
    if (params.max_len == 0) params.max_len = default_max_len(tokens.size());
    const auto hyps = beam_search(vocab.encode(tokens), models.paraphraser, models.cc, fp, params);
    if (hyps.empty()) return {detokenize(tokens), true};
    const std::size_t pick = models.reranker ? rerank_least_toxic(hyps, *models.reranker) : 0;
    const auto ids = hyps[pick].content();
    if (ids.empty()) return {detokenize(tokens), true};
    Tokens out;
    for (int id : ids) out.push_back(vocab.token(id));
    return {detokenize(out), false};
}

} // namespace detox
