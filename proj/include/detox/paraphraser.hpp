#pragma once

#include <vector>

#include "detox/distribution.hpp"
#include "detox/embeddings.hpp"
#include "detox/ngram.hpp"

namespace detox {

/// Source of P_LM(next | prefix, source).
class Paraphraser {
public:
    virtual ~Paraphraser() = default;
    virtual const Vocabulary& vocabulary() const = 0;
    virtual TokenDistribution next_logprobs(const TokenIds& source, const TokenIds& prefix) const = 0;
};

struct CopyParams {
    double gamma = 0.5;  // weight of the copy distribution
    std::size_t neighbor_k = 3;
    /// Aligned mode: copy from a monotone pointer into the source and boost the base LM,
    /// p(y) proportional to base(y) * (1 + boost * copy(y)). gamma = 0 still disables copying.
    bool aligned = false;
    double boost = 50;
    std::size_t skip_window = 3;  // source positions searched when aligning an emitted token
};

namespace detail {

inline std::vector<double> copy_distribution(const TokenIds& source, std::size_t vocab_size, std::size_t neighbor_k,
                                             const NeighborIndex& index) {
    std::vector<double> p(vocab_size, 0.0);
    double entries = 0;
    for (int id : source) {
        if (id == Vocabulary::bos || id == Vocabulary::eos || id == Vocabulary::mask) continue;
        p[static_cast<std::size_t>(id)] += 1;
        entries += 1;
        if (static_cast<std::size_t>(id) < index.neighbors.size()) {
            const auto& nb = index.of(id);
            for (std::size_t i = 0; i < std::min(neighbor_k, nb.size()); ++i) {
                p[static_cast<std::size_t>(nb[i].first)] += 1;
                entries += 1;
            }
        }
    }
    if (entries > 0)
        for (auto& x : p) x /= entries;
    return p;
}

/// Source position the next copied token comes from, after greedily aligning `prefix` left to right.
/// An emitted token matching one of the next `window` source tokens moves the pointer past it; a
/// neighbor of the current source token consumes it; anything else leaves the pointer in place.
inline std::size_t aligned_position(const TokenIds& source, const TokenIds& prefix, const NeighborIndex& index,
                                    std::size_t neighbor_k, std::size_t window) {
    std::size_t pos = 0;
    for (int y : prefix) {
        bool moved = false;
        for (std::size_t j = pos; j < std::min(source.size(), pos + window); ++j) {
            if (source[j] == y) {
                pos = j + 1;
                moved = true;
                break;
            }
        }
        if (moved || pos >= source.size()) continue;
        const int s = source[pos];
        if (s >= 0 && static_cast<std::size_t>(s) < index.neighbors.size()) {
            const auto& nb = index.of(s);
            for (std::size_t i = 0; i < std::min(neighbor_k, nb.size()); ++i)
                if (nb[i].first == y) {
                    ++pos;
                    break;
                }
        }
    }
    return pos;
}

/// Copy entries at the aligned pointer: the current source token, its neighbors and the token after it,
/// one count each. Past the end of the source all mass goes to EOS.
inline std::vector<double> aligned_copy_distribution(const TokenIds& source, const TokenIds& prefix, std::size_t vocab_size,
                                                     const CopyParams& params, const NeighborIndex& index) {
    std::vector<double> p(vocab_size, 0.0);
    const std::size_t pos = aligned_position(source, prefix, index, params.neighbor_k, params.skip_window);
    if (pos >= source.size()) {
        p[Vocabulary::eos] = 1;
        return p;
    }
    double entries = 0;
    auto add = [&](int id) {
        p[static_cast<std::size_t>(id)] += 1;
        entries += 1;
    };
    const int here = source[pos];
    add(here);
    if (here >= 0 && static_cast<std::size_t>(here) < index.neighbors.size()) {
        const auto& nb = index.of(here);
        for (std::size_t i = 0; i < std::min(params.neighbor_k, nb.size()); ++i) add(nb[i].first);
    }
    add(pos + 1 < source.size() ? source[pos + 1] : Vocabulary::eos);
    for (auto& x : p) x /= entries;
    return p;
}

inline TokenDistribution boost_copy(const std::vector<double>& copy, const TokenDistribution& base, double boost) {
    std::vector<double> scores(base.size());
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = base.logprob(i) + std::log1p(boost * copy[i]);
    return TokenDistribution::from_scores(std::move(scores));
}

inline TokenDistribution mix_copy(const std::vector<double>& copy, const TokenDistribution& base, double gamma) {
    bool any_copy = false;
    for (double x : copy) any_copy |= x > 0;
    if (!any_copy || gamma == 0) return base;
    std::vector<double> p(base.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = gamma * copy[i] + (1 - gamma) * base.prob(i);
    return TokenDistribution::from_probs(p);
}

inline TokenDistribution copy_step(const TokenIds& source, const TokenIds& prefix, const CopyParams& params, const NeighborIndex& index,
                                   const TokenDistribution& base) {
    if (params.gamma == 0) return base;
    if (params.aligned) return boost_copy(aligned_copy_distribution(source, prefix, base.size(), params, index), base, params.boost);
    return mix_copy(copy_distribution(source, base.size(), params.neighbor_k, index), base, params.gamma);
}

} // namespace detail

/// gamma * CopyDist + (1 - gamma) * BaseLM(prefix). CopyDist is uniform over the source tokens and
/// each source token's neighbor_k nearest embedding neighbors (repeats accumulate).
inline TokenDistribution paraphrase_logprobs(const TokenIds& source, const TokenIds& prefix, const CopyParams& params,
                                             const EmbeddingTable& emb, const NgramLM& base) {
    if (params.gamma < 0 || params.gamma > 1) throw InvalidArgument("paraphrase: gamma must be in [0,1]");
    const auto index = build_neighbor_index(emb, base.vocabulary(), params.neighbor_k);
    return detail::copy_step(source, prefix, params, index, base.next_logprobs(prefix));
}

/// Copy-mixture paraphraser with a precomputed neighbor index.
class CopyMixtureParaphraser final : public Paraphraser {
public:
    CopyMixtureParaphraser(const NgramLM& base, const EmbeddingTable& emb, CopyParams params)
        : base_(&base), params_(params), index_(build_neighbor_index(emb, base.vocabulary(), params.neighbor_k)) {
        if (params.gamma < 0 || params.gamma > 1) throw InvalidArgument("paraphrase: gamma must be in [0,1]");
    }

    const Vocabulary& vocabulary() const override { return base_->vocabulary(); }
    const CopyParams& params() const { return params_; }

    TokenDistribution next_logprobs(const TokenIds& source, const TokenIds& prefix) const override {
        return detail::copy_step(source, prefix, params_, index_, base_->next_logprobs(prefix));
    }

private:
    const NgramLM* base_;
    CopyParams params_;
    NeighborIndex index_;
};

} // namespace detox
