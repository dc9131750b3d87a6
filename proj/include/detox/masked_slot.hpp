#pragma once

#include <optional>
#include <vector>

#include "json.hpp"

#include "detox/ngram.hpp"

namespace detox {

/// How the two directions are combined. Linear mixes probabilities; log-linear mixes log-probabilities
/// and renormalizes, so a filler must fit both neighbors.
enum class SlotCombination { linear, log_linear };

/// Gap filler: interpolation of a forward bigram P(w | left) and a reverse bigram P(w | right).
/// Sentence edges are BOS on the left and EOS on the right.
class MaskedSlotModel {
public:
    MaskedSlotModel(NgramLM forward, NgramLM reverse, double lambda_left = 0.5, SlotCombination combination = SlotCombination::linear)
        : forward_(std::move(forward)), reverse_(std::move(reverse)), lambda_left_(lambda_left), combination_(combination) {
        if (lambda_left < 0 || lambda_left > 1) throw InvalidArgument("masked slot: lambda_left must be in [0,1]");
        if (!(forward_.vocabulary() == reverse_.vocabulary())) throw VocabularyMismatch("masked slot: direction vocabularies differ");
    }

    const Vocabulary& vocabulary() const { return forward_.vocabulary(); }
    double lambda_left() const noexcept { return lambda_left_; }
    double lambda_right() const noexcept { return 1 - lambda_left_; }
    SlotCombination combination() const noexcept { return combination_; }
    const NgramLM& forward() const { return forward_; }
    const NgramLM& reverse() const { return reverse_; }

    TokenDistribution forward_logprobs(int left) const { return forward_.next_logprobs({left}); }
    TokenDistribution reverse_logprobs(int right) const { return reverse_.next_logprobs({right}); }

    bool operator==(const MaskedSlotModel& o) const {
        return forward_ == o.forward_ && reverse_ == o.reverse_ && lambda_left_ == o.lambda_left_ && combination_ == o.combination_;
    }

private:
    NgramLM forward_;
    NgramLM reverse_;
    double lambda_left_;
    SlotCombination combination_;
};

inline MaskedSlotModel train_masked_slot(const std::vector<Tokens>& corpus, VocabPtr vocab, double add_k = 0.1,
                                         double lambda_left = 0.5, SlotCombination combination = SlotCombination::linear) {
    if (corpus.empty()) throw InvalidArgument("train_masked_slot: empty corpus");
    std::map<TokenIds, NgramLM::ContextCounts> fwd, rev;
    for (const auto& sentence : corpus) {
        TokenIds ids{Vocabulary::bos};
        for (int id : vocab->encode(sentence)) ids.push_back(id);
        ids.push_back(Vocabulary::eos);
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            auto& f = fwd[{ids[i]}];
            f.total += 1;
            f.next[ids[i + 1]] += 1;
            auto& r = rev[{ids[i + 1]}];
            r.total += 1;
            r.next[ids[i]] += 1;
        }
    }
    const NgramOptions options{2, add_k, false};
    return MaskedSlotModel(NgramLM(vocab, options, std::move(fwd)), NgramLM(vocab, options, std::move(rev)), lambda_left, combination);
}

/// lambda_left * P_fwd(w | left) + lambda_right * P_rev(w | right), or the log-linear counterpart. A missing side hands its weight to the other.
inline TokenDistribution masked_logprobs(const MaskedSlotModel& model, std::optional<int> left, std::optional<int> right) {
    if (!left && !right) throw InvalidArgument("masked_logprobs: need a left or a right context");
    if (!right || model.lambda_right() == 0) return model.forward_logprobs(left.value_or(Vocabulary::bos));
    if (!left || model.lambda_left() == 0) return model.reverse_logprobs(*right);
    const auto f = model.forward_logprobs(*left);
    const auto r = model.reverse_logprobs(*right);
    if (model.combination() == SlotCombination::log_linear) {
        std::vector<double> s(f.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = model.lambda_left() * f.logprob(i) + model.lambda_right() * r.logprob(i);
        return TokenDistribution::from_scores(std::move(s));
    }
    std::vector<double> p(f.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = model.lambda_left() * f.prob(i) + model.lambda_right() * r.prob(i);
    return TokenDistribution::from_probs(p);
}

inline nlohmann::json to_json(const MaskedSlotModel& m) {
    return {{"lambda_left", m.lambda_left()},
            {"combination", m.combination() == SlotCombination::log_linear ? "log_linear" : "linear"},
            {"forward", to_json(m.forward())}, {"reverse", to_json(m.reverse())}};
}

inline MaskedSlotModel masked_slot_from_json(const nlohmann::json& j, VocabPtr vocab) {
    return MaskedSlotModel(ngram_from_json(j.at("forward"), vocab), ngram_from_json(j.at("reverse"), vocab),
                           j.at("lambda_left").get<double>(),
                           j.value("combination", "linear") == "log_linear" ? SlotCombination::log_linear : SlotCombination::linear);
}

} // namespace detox
