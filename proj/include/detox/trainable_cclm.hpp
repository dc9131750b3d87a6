#pragma once

#include <cmath>
#include <vector>

#include "detox/distribution.hpp"
#include "detox/ngram.hpp"

namespace detox {

/// Class-conditional softmax bigram model: P(next | prev, c) = softmax(theta[c][prev])[next].
/// Small enough to train by full-batch gradient descent on the generative/discriminative loss mix.
class TrainableCCLM final : public ClassConditionalModel {
public:
    TrainableCCLM(VocabPtr vocab, std::size_t classes, std::vector<double> prior = {})
        : vocab_(std::move(vocab)),
          classes_(classes),
          prior_(prior.empty() ? uniform_prior(classes) : std::move(prior)),
          theta_(classes * vocab_->size() * vocab_->size(), 0.0) {
        if (classes == 0) throw InvalidArgument("trainable cclm: need at least one class");
        check_prior(prior_, classes_);
    }

    std::size_t num_classes() const override { return classes_; }
    const std::vector<double>& prior() const override { return prior_; }
    const Vocabulary& vocabulary() const override { return *vocab_; }

    std::vector<double>& theta() noexcept { return theta_; }
    const std::vector<double>& theta() const noexcept { return theta_; }

    std::size_t row_offset(int cls, int prev) const {
        const std::size_t v = vocab_->size();
        return (static_cast<std::size_t>(cls) * v + static_cast<std::size_t>(prev)) * v;
    }

    std::vector<double> row_logsoftmax(int cls, int prev) const {
        const std::size_t v = vocab_->size();
        const auto* row = theta_.data() + row_offset(cls, prev);
        std::vector<double> out(row, row + v);
        const double z = log_sum_exp(out);
        for (auto& x : out) x -= z;
        return out;
    }

    TokenDistribution next_logprobs(int cls, const TokenIds& prefix) const override {
        if (cls < 0 || static_cast<std::size_t>(cls) >= classes_) throw InvalidArgument("unknown class " + std::to_string(cls));
        auto lp = row_logsoftmax(cls, prefix.empty() ? Vocabulary::bos : prefix.back());
        for (auto& x : lp) x = std::max(x, kLogFloor);
        return TokenDistribution(std::move(lp));
    }

private:
    VocabPtr vocab_;
    std::size_t classes_;
    std::vector<double> prior_;
    std::vector<double> theta_;
};

namespace detail {

struct EncodedBatch {
    std::vector<int> labels;
    std::vector<TokenIds> sentences;
};

inline EncodedBatch encode_batch(const TrainableCCLM& model, const LabeledCorpus& batch) {
    if (batch.records.empty()) throw InvalidArgument("loss: empty batch");
    EncodedBatch out;
    for (const auto& r : batch.records) {
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= model.num_classes()) throw InvalidArgument("loss: label outside model classes");
        if (r.tokens.empty()) throw InvalidArgument("loss: empty sentence in batch");
        out.labels.push_back(r.label);
        out.sentences.push_back(model.vocabulary().encode(r.tokens));
    }
    return out;
}

// Log-softmax of every (class, prev) row.
inline std::vector<double> all_row_logsoftmax(const TrainableCCLM& model) {
    const std::size_t v = model.vocabulary().size();
    std::vector<double> out(model.theta().size());
    for (std::size_t c = 0; c < model.num_classes(); ++c)
        for (std::size_t a = 0; a < v; ++a) {
            const auto row = model.row_logsoftmax(static_cast<int>(c), static_cast<int>(a));
            std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(model.row_offset(static_cast<int>(c), static_cast<int>(a))));
        }
    return out;
}

inline double sequence_loglike(const TrainableCCLM& model, const std::vector<double>& logsm, int cls, const TokenIds& ids) {
    double s = 0;
    int prev = Vocabulary::bos;
    for (int id : ids) {
        s += logsm[model.row_offset(cls, prev) + static_cast<std::size_t>(id)];
        prev = id;
    }
    return s;
}

inline std::vector<double> class_log_posterior(const TrainableCCLM& model, const std::vector<double>& logsm, const TokenIds& ids) {
    std::vector<double> lp(model.num_classes());
    for (std::size_t c = 0; c < lp.size(); ++c)
        lp[c] = std::log(model.prior()[c]) + sequence_loglike(model, logsm, static_cast<int>(c), ids);
    const double z = log_sum_exp(lp);
    for (auto& x : lp) x -= z;
    return lp;
}

} // namespace detail

/// Mean over sentences of the per-token NLL under the sentence's own class.
inline double loss_generative(const TrainableCCLM& model, const LabeledCorpus& batch) {
    const auto enc = detail::encode_batch(model, batch);
    const auto logsm = detail::all_row_logsoftmax(model);
    double total = 0;
    for (std::size_t i = 0; i < enc.sentences.size(); ++i) {
        const auto& ids = enc.sentences[i];
        total += -detail::sequence_loglike(model, logsm, enc.labels[i], ids) / static_cast<double>(ids.size());
    }
    return total / static_cast<double>(enc.sentences.size());
}

/// Mean negative log Bayes posterior of the true class given the whole sentence.
inline double loss_discriminative(const TrainableCCLM& model, const LabeledCorpus& batch) {
    if (model.num_classes() < 2) throw DegenerateInput("discriminative loss needs at least two classes");
    const auto enc = detail::encode_batch(model, batch);
    const auto logsm = detail::all_row_logsoftmax(model);
    double total = 0;
    for (std::size_t i = 0; i < enc.sentences.size(); ++i)
        total += -detail::class_log_posterior(model, logsm, enc.sentences[i])[static_cast<std::size_t>(enc.labels[i])];
    return total / static_cast<double>(enc.sentences.size());
}

inline void check_lambda(double lambda) {
    if (!(lambda >= 0 && lambda <= 1)) throw InvalidArgument("lambda must be in [0,1]");
}

/// lambda * L_D + (1 - lambda) * L_G.
inline double loss_combined(const TrainableCCLM& model, const LabeledCorpus& batch, double lambda) {
    check_lambda(lambda);
    double out = 0;
    if (lambda < 1) out += (1 - lambda) * loss_generative(model, batch);
    if (lambda > 0) out += lambda * loss_discriminative(model, batch);
    return out;
}

/// Analytic gradient of loss_combined with respect to theta (same layout as theta()).
inline std::vector<double> grad_combined(const TrainableCCLM& model, const LabeledCorpus& batch, double lambda) {
    check_lambda(lambda);
    if (lambda > 0 && model.num_classes() < 2) throw DegenerateInput("discriminative loss needs at least two classes");
    const auto enc = detail::encode_batch(model, batch);
    const auto logsm = detail::all_row_logsoftmax(model);
    const std::size_t v = model.vocabulary().size();
    const double n = static_cast<double>(enc.sentences.size());
    std::vector<double> grad(model.theta().size(), 0.0);

    // Adds coef * (softmax(row) - onehot(next)) for every transition of `ids` under class `cls`.
    auto accumulate = [&](int cls, const TokenIds& ids, double coef) {
        int prev = Vocabulary::bos;
        for (int id : ids) {
            const std::size_t off = model.row_offset(cls, prev);
            for (std::size_t b = 0; b < v; ++b) grad[off + b] += coef * std::exp(logsm[off + b]);
            grad[off + static_cast<std::size_t>(id)] -= coef;
            prev = id;
        }
    };

    for (std::size_t i = 0; i < enc.sentences.size(); ++i) {
        const auto& ids = enc.sentences[i];
        if (lambda < 1) accumulate(enc.labels[i], ids, (1 - lambda) / (n * static_cast<double>(ids.size())));
        if (lambda > 0) {
            const auto lpost = detail::class_log_posterior(model, logsm, ids);
            for (std::size_t c = 0; c < model.num_classes(); ++c) {
                const double d = std::exp(lpost[c]) - (static_cast<int>(c) == enc.labels[i] ? 1.0 : 0.0);
                // dL/dl_c = d, and dl_c/dtheta = onehot - softmax, hence the sign flip.
                if (d != 0) accumulate(static_cast<int>(c), ids, -lambda * d / n);
            }
        }
    }
    return grad;
}

struct CclmTrainResult {
    TrainableCCLM model;
    std::vector<double> loss_history;  // loss before each step, plus the final loss
};

/// Full-batch gradient descent from theta = 0.
inline CclmTrainResult train_cclm(const LabeledCorpus& corpus, VocabPtr vocab, double lambda, double lr, int epochs) {
    if (!(lr > 0)) throw InvalidArgument("train_cclm: lr must be > 0");
    check_lambda(lambda);
    CclmTrainResult out{TrainableCCLM(std::move(vocab), corpus.classes.size()), {}};
    for (int e = 0; e < epochs; ++e) {
        out.loss_history.push_back(loss_combined(out.model, corpus, lambda));
        const auto g = grad_combined(out.model, corpus, lambda);
        auto& theta = out.model.theta();
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
    }
    out.loss_history.push_back(loss_combined(out.model, corpus, lambda));
    return out;
}

} // namespace detox
