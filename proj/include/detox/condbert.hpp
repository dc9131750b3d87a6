#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "detox/classifier.hpp"
#include "detox/distribution.hpp"
#include "detox/embeddings.hpp"
#include "detox/masked_slot.hpp"
#include "detox/text.hpp"

namespace detox {

struct EditorParams {
    double t_min = 0.2;
    double penalty = 4.0;     // p: subtracted log-prob per unit of token toxicity
    double sim_weight = 1.0;  // beta: weight of the similarity to the original span
    double delta = 0.1;       // share of the original words' neighbor distribution mixed into every slot
    std::size_t neighbor_k = 10;
    std::size_t slot_beams = 10;
    std::size_t max_tokens_per_slot = 3;
    bool multiword = true;
    std::size_t k = 10;  // candidates kept per span

    void validate() const {
        if (!(t_min >= 0 && t_min <= 1)) throw InvalidArgument("editor: t_min must be in [0,1]");
        if (!(penalty >= 0)) throw InvalidArgument("editor: penalty must be >= 0");
        if (!(sim_weight >= 0)) throw InvalidArgument("editor: sim weight must be >= 0");
        if (!(delta >= 0 && delta <= 1)) throw InvalidArgument("editor: delta must be in [0,1]");
        if (slot_beams < 1 || max_tokens_per_slot < 1 || k < 1) throw InvalidArgument("editor: beams, tokens per slot and k must be >= 1");
    }
};

/// Half-open token range [start, end).
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const Span&) const = default;
};

using MaskPlan = std::vector<Span>;

struct ReplacementCandidate {
    TokenIds tokens;
    double model_score = 0;
    double sim_score = 0;
    double final_score = 0;
};

/// t = max(t_min, max_i s_i / 2).
inline double adaptive_threshold(std::span<const double> scores, double t_min) {
    if (scores.empty()) throw InvalidArgument("adaptive_threshold: no scores");
    return std::max(t_min, *std::max_element(scores.begin(), scores.end()) / 2);
}

/// Marks words whose score strictly exceeds the adaptive threshold; adjacent marks merge into one span.
inline MaskPlan plan_masks(std::span<const double> scores, const EditorParams& params) {
    MaskPlan plan;
    if (scores.empty()) return plan;
    const double t = adaptive_threshold(scores, params.t_min);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!(scores[i] > t)) continue;
        if (!plan.empty() && plan.back().end == i)
            plan.back().end = i + 1;
        else
            plan.push_back({i, i + 1});
    }
    return plan;
}

inline std::vector<double> token_scores(const TokenIds& ids, const ToxicityLexicon& lexicon) {
    std::vector<double> s(ids.size());
    std::transform(ids.begin(), ids.end(), s.begin(), [&](int id) { return lexicon.score(id); });
    return s;
}

inline MaskPlan plan_masks(const TokenIds& ids, const ToxicityLexicon& lexicon, const EditorParams& params) {
    return plan_masks(token_scores(ids, lexicon), params);
}

/// log P(v) - p * toxicity(v), renormalized.
inline TokenDistribution penalized_slot_dist(const TokenDistribution& raw, const ToxicityLexicon& lexicon, double p) {
    if (!(p >= 0)) throw InvalidArgument("penalized_slot_dist: p must be >= 0");
    if (p == 0) return raw;
    std::vector<double> scores(raw.size());
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = raw.logprob(i) - p * lexicon.score(static_cast<int>(i));
    return TokenDistribution::from_scores(std::move(scores));
}

/// Distribution of the slot given its left and right neighbors (either may be absent).
using SlotScorer = std::function<TokenDistribution(std::optional<int>, std::optional<int>)>;

/// Context around a span in the original sentence. Sentence edges are BOS / EOS.
struct SlotContext {
    int left = Vocabulary::bos;
    int right = Vocabulary::eos;
};

inline bool fillable(int id) { return !Vocabulary::is_special(id); }

namespace detail {

inline std::optional<std::span<const double>> vector_of(const EmbeddingTable& emb, const Vocabulary& vocab, int id) {
    if (Vocabulary::is_special(id)) return std::nullopt;
    return emb.find(vocab.token(id));
}

inline std::vector<double> mean_of_ids(const TokenIds& ids, const EmbeddingTable& emb, const Vocabulary& vocab) {
    Tokens t;
    for (int id : ids)
        if (!Vocabulary::is_special(id)) t.push_back(vocab.token(id));
    return mean_vector(t, emb);
}

// Neighbors of the original span words, weighted by cosine and normalized. Empty when nothing is covered.
inline std::vector<double> neighbor_distribution(const TokenIds& originals, const EmbeddingTable& emb, const Vocabulary& vocab,
                                                 std::size_t neighbor_k) {
    std::vector<double> p(vocab.size(), 0.0);
    double total = 0;
    for (int o : originals) {
        const auto ov = vector_of(emb, vocab, o);
        if (!ov) continue;
        std::vector<std::pair<double, int>> scored;
        for (std::size_t id = Vocabulary::num_specials; id < vocab.size(); ++id) {
            if (static_cast<int>(id) == o) continue;
            const auto v = vector_of(emb, vocab, static_cast<int>(id));
            if (!v) continue;
            const double c = cosine(*ov, *v);
            if (c > 0) scored.emplace_back(c, static_cast<int>(id));
        }
        const std::size_t keep = std::min(neighbor_k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                          [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
        for (std::size_t i = 0; i < keep; ++i) {
            p[static_cast<std::size_t>(scored[i].second)] += scored[i].first;
            total += scored[i].first;
        }
    }
    if (total == 0) return {};
    for (auto& x : p) x /= total;
    return p;
}

inline TokenDistribution mix(const TokenDistribution& raw, const std::vector<double>& other, double delta) {
    if (delta == 0 || other.empty()) return raw;
    std::vector<double> p(raw.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = (1 - delta) * raw.prob(i) + delta * other[i];
    return TokenDistribution::from_probs(p);
}

inline double harmonic_mean(std::span<const double> probs) {
    double inv = 0;
    for (double p : probs) {
        if (p <= 0) return 0;
        inv += 1 / p;
    }
    return static_cast<double>(probs.size()) / inv;
}

} // namespace detail

/// Slot scorer used by the editor: raw slot model, optionally mixed with the original words' embedding
/// neighborhood (delta), then toxicity-penalized.
inline SlotScorer make_slot_scorer(const MaskedSlotModel& model, const ToxicityLexicon& lexicon, const EmbeddingTable& emb,
                                   const TokenIds& originals, const EditorParams& params) {
    auto neighbors = params.delta > 0 ? detail::neighbor_distribution(originals, emb, model.vocabulary(), params.neighbor_k)
                                      : std::vector<double>{};
    return [&model, &lexicon, neighbors = std::move(neighbors), delta = params.delta, p = params.penalty](std::optional<int> l,
                                                                                                          std::optional<int> r) {
        return penalized_slot_dist(detail::mix(masked_logprobs(model, l, r), neighbors, delta), lexicon, p);
    };
}

/// Single-token replacements: penalized slot log-prob plus beta * cosine to the original span, best first.
inline std::vector<ReplacementCandidate> candidates_single(const Span& span, const SlotContext& context, const TokenIds& original,
                                                           const MaskedSlotModel& model, const EmbeddingTable& emb,
                                                           const ToxicityLexicon& lexicon, const EditorParams& params,
                                                           std::size_t k) {
    if (k < 1) throw InvalidArgument("candidates_single: k must be >= 1");
    if (span.start >= span.end || span.end > original.size()) throw InvalidArgument("candidates_single: bad span");
    const auto& vocab = model.vocabulary();
    const TokenIds originals(original.begin() + static_cast<std::ptrdiff_t>(span.start), original.begin() + static_cast<std::ptrdiff_t>(span.end));
    const auto dist = make_slot_scorer(model, lexicon, emb, originals, params)(context.left, context.right);
    const auto target = detail::mean_of_ids(originals, emb, vocab);
    std::vector<ReplacementCandidate> out;
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        if (!fillable(static_cast<int>(id))) continue;
        ReplacementCandidate c;
        c.tokens = {static_cast<int>(id)};
        c.model_score = dist.logprob(id);
        if (const auto v = detail::vector_of(emb, vocab, static_cast<int>(id))) c.sim_score = cosine(*v, target);
        c.final_score = c.model_score + params.sim_weight * c.sim_score;
        out.push_back(std::move(c));
    }
    const std::size_t keep = std::min(k, out.size());
    std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(), [](const auto& a, const auto& b) {
        return a.final_score != b.final_score ? a.final_score > b.final_score : a.tokens < b.tokens;
    });
    out.resize(keep);
    return out;
}

/// Multi-token replacements by beam search. Non-final tokens of a sequence are predicted from the left
/// context alone (their right neighbor is another gap); the closing token also sees the fixed right
/// context. Every length 1..max competes under the harmonic mean of its token probabilities.
/// `final_score` here is log HM; the caller adds the similarity term.
inline std::vector<ReplacementCandidate> candidates_multi(const SlotContext& context, const SlotScorer& scorer, std::size_t vocab_size,
                                                          const EditorParams& params) {
    if (params.max_tokens_per_slot < 1) throw InvalidArgument("candidates_multi: max_tokens_per_slot must be >= 1");
    struct Open {
        TokenIds tokens;
        std::vector<double> probs;
    };
    std::vector<Open> beam{{{}, {}}};
    std::vector<ReplacementCandidate> done;
    for (std::size_t depth = 0; depth < params.max_tokens_per_slot && !beam.empty(); ++depth) {
        const bool last_depth = depth + 1 == params.max_tokens_per_slot;
        std::vector<Open> next;
        for (const auto& open : beam) {
            const int left = open.tokens.empty() ? context.left : open.tokens.back();
            const auto closing = scorer(left, context.right);
            std::optional<TokenDistribution> continuing;
            if (!last_depth) continuing = scorer(left, std::nullopt);
            for (std::size_t id = 0; id < vocab_size; ++id) {
                if (!fillable(static_cast<int>(id))) continue;
                auto probs = open.probs;
                probs.push_back(closing.prob(id));
                ReplacementCandidate c;
                c.tokens = open.tokens;
                c.tokens.push_back(static_cast<int>(id));
                c.model_score = std::log(detail::harmonic_mean(probs));
                c.final_score = c.model_score;
                done.push_back(std::move(c));
                if (continuing) {
                    Open o{open.tokens, open.probs};
                    o.tokens.push_back(static_cast<int>(id));
                    o.probs.push_back(continuing->prob(id));
                    next.push_back(std::move(o));
                }
            }
        }
        const std::size_t keep = std::min(params.slot_beams, next.size());
        std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(), [](const Open& a, const Open& b) {
            const double ha = detail::harmonic_mean(a.probs), hb = detail::harmonic_mean(b.probs);
            return ha != hb ? ha > hb : a.tokens < b.tokens;
        });
        next.resize(keep);
        beam = std::move(next);
    }
    std::sort(done.begin(), done.end(), [](const auto& a, const auto& b) {
        return a.final_score != b.final_score ? a.final_score > b.final_score : a.tokens < b.tokens;
    });
    return done;
}

struct CondbertModels {
    const MaskedSlotModel& slot;
    const EmbeddingTable& emb;
    const ToxicityLexicon& lexicon;
};

/// Ranked replacements for one span, single- or multi-token depending on params.
inline std::vector<ReplacementCandidate> span_candidates(const Span& span, const TokenIds& ids, const CondbertModels& models,
                                                         const EditorParams& params) {
    if (span.start >= span.end || span.end > ids.size()) throw InvalidArgument("span out of range");
    const SlotContext ctx{span.start > 0 ? ids[span.start - 1] : Vocabulary::bos, span.end < ids.size() ? ids[span.end] : Vocabulary::eos};
    if (!params.multiword || params.max_tokens_per_slot == 1)
        return candidates_single(span, ctx, ids, models.slot, models.emb, models.lexicon, params, params.k);

    const auto& vocab = models.slot.vocabulary();
    const TokenIds originals(ids.begin() + static_cast<std::ptrdiff_t>(span.start), ids.begin() + static_cast<std::ptrdiff_t>(span.end));
    auto all = candidates_multi(ctx, make_slot_scorer(models.slot, models.lexicon, models.emb, originals, params), vocab.size(), params);
    const auto target = detail::mean_of_ids(originals, models.emb, vocab);
    for (auto& c : all) {
        c.sim_score = cosine(detail::mean_of_ids(c.tokens, models.emb, vocab), target);
        c.final_score = c.model_score + params.sim_weight * c.sim_score;
    }
    const std::size_t keep = std::min(params.k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), [](const auto& a, const auto& b) {
        return a.final_score != b.final_score ? a.final_score > b.final_score : a.tokens < b.tokens;
    });
    all.resize(keep);
    return all;
}

struct CondbertEdit {
    Span span;
    TokenIds replacement;
};

struct CondbertResult {
    std::string text;
    std::vector<CondbertEdit> edits;
};

/// Replaces each planned span, left to right, with its best candidate. Spans see the original sentence as
/// context. Bytes outside the spans are copied from the input unchanged.
inline CondbertResult condbert_detoxify(const std::string& text, const CondbertModels& models, const EditorParams& params,
                                        const TokenizerConfig& tok = {}) {
    params.validate();
    const auto& vocab = models.slot.vocabulary();
    const auto pieces = tokenize_with_offsets(text, tok);
    TokenIds ids;
    for (const auto& p : pieces) ids.push_back(vocab.id(p.surface));
    const auto plan = plan_masks(ids, models.lexicon, params);
    CondbertResult out{text, {}};
    if (plan.empty()) return out;

    std::string edited;
    std::size_t cursor = 0;
    for (const auto& span : plan) {
        const auto cands = span_candidates(span, ids, models, params);
        if (cands.empty()) continue;
        std::string replacement;
        for (int id : cands.front().tokens) {
            if (!replacement.empty()) replacement.push_back(' ');
            replacement += vocab.token(id);
        }
        edited.append(text, cursor, pieces[span.start].begin - cursor);
        edited += replacement;
        cursor = pieces[span.end - 1].end;
        out.edits.push_back({span, cands.front().tokens});
    }
    edited.append(text, cursor, std::string::npos);
    out.text = std::move(edited);
    return out;
}

} // namespace detox
