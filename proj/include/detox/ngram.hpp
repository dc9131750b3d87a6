#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <vector>

#include "json.hpp"

#include "detox/classifier.hpp"
#include "detox/distribution.hpp"
#include "detox/error.hpp"
#include "detox/text.hpp"

namespace detox {

struct NgramOptions {
    int order = 2;
    double add_k = 0.1;
    /// Count a transition into EOS at the end of every sentence. Needed by generators.
    bool with_eos = false;
};

/// Add-k smoothed n-gram model over a fixed vocabulary. Contexts are BOS-padded.
class NgramLM {
public:
    struct ContextCounts {
        double total = 0;
        std::map<int, double> next;

        bool operator==(const ContextCounts&) const = default;
    };

    NgramLM(VocabPtr vocab, NgramOptions options, std::map<TokenIds, ContextCounts> table = {})
        : vocab_(std::move(vocab)), options_(options), table_(std::move(table)) {
        if (options_.order < 1) throw InvalidArgument("ngram: order must be >= 1");
        if (!(options_.add_k > 0)) throw InvalidArgument("ngram: add_k must be > 0");
    }

    const Vocabulary& vocabulary() const { return *vocab_; }
    const VocabPtr& vocabulary_ptr() const { return vocab_; }
    const NgramOptions& options() const { return options_; }
    const std::map<TokenIds, ContextCounts>& table() const { return table_; }

    TokenIds context_of(const TokenIds& prefix) const {
        const std::size_t width = static_cast<std::size_t>(options_.order - 1);
        TokenIds ctx(width, Vocabulary::bos);
        const std::size_t take = std::min(width, prefix.size());
        std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(), ctx.end() - static_cast<std::ptrdiff_t>(take));
        return ctx;
    }

    /// P(w | ctx) = (count(ctx, w) + k) / (count(ctx) + k |V|).
    TokenDistribution next_logprobs(const TokenIds& prefix) const {
        const double v = static_cast<double>(vocab_->size());
        const double k = options_.add_k;
        auto it = table_.find(context_of(prefix));
        if (it == table_.end()) return TokenDistribution::uniform(vocab_->size());
        const double denom = it->second.total + k * v;
        std::vector<double> lp(vocab_->size(), std::log(k / denom));
        for (const auto& [w, c] : it->second.next) lp[static_cast<std::size_t>(w)] = std::log((c + k) / denom);
        return TokenDistribution(std::move(lp));
    }

    double logprob(const TokenIds& prefix, int next) const {
        const double v = static_cast<double>(vocab_->size());
        const double k = options_.add_k;
        auto it = table_.find(context_of(prefix));
        if (it == table_.end()) return -std::log(v);
        auto jt = it->second.next.find(next);
        const double c = jt == it->second.next.end() ? 0.0 : jt->second;
        return std::log((c + k) / (it->second.total + k * v));
    }

    /// Sum of log P over the tokens (and the EOS transition when the model was trained with EOS).
    double sentence_logprob(const TokenIds& sentence) const {
        double s = 0;
        TokenIds prefix;
        for (int id : sentence) {
            s += logprob(prefix, id);
            prefix.push_back(id);
        }
        if (options_.with_eos) s += logprob(prefix, Vocabulary::eos);
        return s;
    }

    /// Mean negative log-likelihood per predicted token.
    double per_token_nll(const TokenIds& sentence) const {
        const std::size_t n = sentence.size() + (options_.with_eos ? 1 : 0);
        if (n == 0) return 0.0;
        return -sentence_logprob(sentence) / static_cast<double>(n);
    }

    bool operator==(const NgramLM& o) const {
        return *vocab_ == *o.vocab_ && options_.order == o.options_.order && options_.add_k == o.options_.add_k &&
               options_.with_eos == o.options_.with_eos && table_ == o.table_;
    }

private:
    VocabPtr vocab_;
    NgramOptions options_;
    std::map<TokenIds, ContextCounts> table_;
};

inline NgramLM train_ngram(const std::vector<Tokens>& corpus, VocabPtr vocab, const NgramOptions& options = {}) {
    if (corpus.empty()) throw InvalidArgument("train_ngram: empty corpus");
    std::map<TokenIds, NgramLM::ContextCounts> table;
    NgramLM shape(vocab, options);
    for (const auto& sentence : corpus) {
        TokenIds ids = vocab->encode(sentence);
        if (options.with_eos) ids.push_back(Vocabulary::eos);
        TokenIds prefix;
        for (int id : ids) {
            auto& cell = table[shape.context_of(prefix)];
            cell.total += 1;
            cell.next[id] += 1;
            prefix.push_back(id);
        }
    }
    return NgramLM(std::move(vocab), options, std::move(table));
}

inline nlohmann::json to_json(const NgramLM& lm) {
    nlohmann::json contexts = nlohmann::json::array();
    for (const auto& [ctx, cell] : lm.table()) {
        nlohmann::json next = nlohmann::json::array();
        for (const auto& [w, c] : cell.next) next.push_back({w, c});
        contexts.push_back({{"context", ctx}, {"next", next}});
    }
    return {{"order", lm.options().order},
            {"add_k", lm.options().add_k},
            {"with_eos", lm.options().with_eos},
            {"vocab", lm.vocabulary().words()},
            {"contexts", contexts}};
}

inline NgramLM ngram_from_json(const nlohmann::json& j, VocabPtr vocab = nullptr) {
    auto own = std::make_shared<const Vocabulary>(j.at("vocab").get<std::vector<std::string>>());
    if (vocab && !(*vocab == *own)) throw VocabularyMismatch("ngram: persisted vocabulary differs");
    if (!vocab) vocab = own;
    NgramOptions options{j.at("order").get<int>(), j.at("add_k").get<double>(), j.at("with_eos").get<bool>()};
    std::map<TokenIds, NgramLM::ContextCounts> table;
    for (const auto& entry : j.at("contexts")) {
        NgramLM::ContextCounts cell;
        for (const auto& pair : entry.at("next")) {
            const int w = pair.at(0).get<int>();
            if (w < 0 || static_cast<std::size_t>(w) >= vocab->size()) throw BundleError("ngram: token id out of range");
            cell.next[w] = pair.at(1).get<double>();
            cell.total += cell.next[w];
        }
        table.emplace(entry.at("context").get<TokenIds>(), std::move(cell));
    }
    return NgramLM(std::move(vocab), options, std::move(table));
}

/// A source of P_CC(next | prefix, class) plus the class prior.
class ClassConditionalModel {
public:
    virtual ~ClassConditionalModel() = default;
    virtual std::size_t num_classes() const = 0;
    virtual const std::vector<double>& prior() const = 0;
    virtual const Vocabulary& vocabulary() const = 0;
    /// Throws InvalidArgument for an unknown class.
    virtual TokenDistribution next_logprobs(int cls, const TokenIds& prefix) const = 0;
};

inline std::vector<double> uniform_prior(std::size_t classes) {
    return std::vector<double>(classes, 1.0 / static_cast<double>(classes));
}

inline void check_prior(const std::vector<double>& prior, std::size_t classes) {
    if (prior.size() != classes) throw InvalidArgument("prior size does not match class count");
    double s = 0;
    for (double p : prior) {
        if (!(p >= 0)) throw InvalidArgument("prior entries must be >= 0");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument("prior must sum to 1");
}

/// One n-gram LM per class sharing a vocabulary.
class ClassConditionalLM final : public ClassConditionalModel {
public:
    ClassConditionalLM(std::vector<NgramLM> lms, std::vector<double> prior = {})
        : lms_(std::move(lms)), prior_(prior.empty() ? uniform_prior(lms_.size()) : std::move(prior)) {
        if (lms_.empty()) throw InvalidArgument("class-conditional LM needs at least one class");
        check_prior(prior_, lms_.size());
        for (const auto& lm : lms_)
            if (!(lm.vocabulary() == lms_.front().vocabulary())) throw VocabularyMismatch("class LMs must share the vocabulary");
    }

    std::size_t num_classes() const override { return lms_.size(); }
    const std::vector<double>& prior() const override { return prior_; }
    const Vocabulary& vocabulary() const override { return lms_.front().vocabulary(); }
    const std::vector<NgramLM>& models() const { return lms_; }

    TokenDistribution next_logprobs(int cls, const TokenIds& prefix) const override {
        if (cls < 0 || static_cast<std::size_t>(cls) >= lms_.size()) throw InvalidArgument("unknown class " + std::to_string(cls));
        return lms_[static_cast<std::size_t>(cls)].next_logprobs(prefix);
    }

    bool operator==(const ClassConditionalLM& o) const { return lms_ == o.lms_ && prior_ == o.prior_; }

private:
    std::vector<NgramLM> lms_;
    std::vector<double> prior_;
};

inline TokenDistribution cc_next_logprobs(const ClassConditionalModel& cclm, int cls, const TokenIds& prefix) {
    return cclm.next_logprobs(cls, prefix);
}

/// Trains one LM per class label of the corpus.
inline ClassConditionalLM train_class_conditional(const LabeledCorpus& corpus, VocabPtr vocab, const NgramOptions& options,
                                                  std::vector<double> prior = {}) {
    std::vector<NgramLM> lms;
    for (std::size_t c = 0; c < corpus.classes.size(); ++c) {
        auto sentences = corpus.sentences_of(static_cast<int>(c));
        if (sentences.empty()) throw DegenerateInput("class '" + corpus.classes[c] + "' has no sentences");
        lms.push_back(train_ngram(sentences, vocab, options));
    }
    return ClassConditionalLM(std::move(lms), std::move(prior));
}

inline nlohmann::json to_json(const ClassConditionalLM& cc) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& lm : cc.models()) models.push_back(to_json(lm));
    return {{"prior", cc.prior()}, {"models", models}};
}

inline ClassConditionalLM cclm_from_json(const nlohmann::json& j, VocabPtr vocab) {
    std::vector<NgramLM> lms;
    for (const auto& m : j.at("models")) lms.push_back(ngram_from_json(m, vocab));
    return ClassConditionalLM(std::move(lms), j.at("prior").get<std::vector<double>>());
}

} // namespace detox
