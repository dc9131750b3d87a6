#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <vector>

#include "json.hpp"

#include "detox/distribution.hpp"
#include "detox/error.hpp"
#include "detox/text.hpp"

namespace detox {

using VocabPtr = std::shared_ptr<const Vocabulary>;

/// Binary logistic regression over word-presence features. Class 1 is toxic.
struct BowClassifier {
    VocabPtr vocab;
    std::vector<double> weights;  // one per vocabulary id, specials stay 0
    double bias = 0;

    bool operator==(const BowClassifier& o) const {
        return *vocab == *o.vocab && weights == o.weights && bias == o.bias;
    }
};

struct BowTrainParams {
    double lr = 0.5;
    int epochs = 300;
    double l2 = 1e-4;
};

namespace detail {

inline std::vector<int> unique_features(const TokenIds& ids) {
    std::set<int> s;
    for (int id : ids)
        if (!Vocabulary::is_special(id)) s.insert(id);
    return {s.begin(), s.end()};
}

} // namespace detail

/// Full-batch gradient descent on mean log-loss plus (l2/2)*|w|^2. Zero initialization, so the result is deterministic.
inline BowClassifier train_bow(const LabeledCorpus& corpus, VocabPtr vocab, const BowTrainParams& hp = {}) {
    if (!(hp.lr > 0)) throw InvalidArgument("train_bow: lr must be > 0");
    if (hp.epochs < 0) throw InvalidArgument("train_bow: epochs must be >= 0");
    bool seen[2] = {false, false};
    for (const auto& r : corpus.records) {
        if (r.label != 0 && r.label != 1) throw InvalidArgument("train_bow: binary labels expected");
        seen[r.label] = true;
    }
    if (!seen[0] || !seen[1]) throw DegenerateInput("train_bow: corpus must contain both classes");

    std::vector<std::vector<int>> features;
    features.reserve(corpus.records.size());
    for (const auto& r : corpus.records) features.push_back(detail::unique_features(vocab->encode(r.tokens)));

    BowClassifier clf{vocab, std::vector<double>(vocab->size(), 0.0), 0.0};
    const double n = static_cast<double>(corpus.records.size());
    std::vector<double> grad(vocab->size());
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_bias = 0;
        for (std::size_t i = 0; i < features.size(); ++i) {
            double z = clf.bias;
            for (int f : features[i]) z += clf.weights[f];
            const double err = sigmoid(z) - corpus.records[i].label;
            grad_bias += err;
            for (int f : features[i]) grad[f] += err;
        }
        for (std::size_t f = Vocabulary::num_specials; f < grad.size(); ++f)
            clf.weights[f] -= hp.lr * (grad[f] / n + hp.l2 * clf.weights[f]);
        clf.bias -= hp.lr * grad_bias / n;
    }
    return clf;
}

inline double classify(const BowClassifier& clf, const TokenIds& ids) {
    double z = clf.bias;
    for (int f : detail::unique_features(ids)) z += clf.weights.at(static_cast<std::size_t>(f));
    return sigmoid(z);
}

/// Probability that the sentence is toxic.
inline double classify(const BowClassifier& clf, const Tokens& tokens) { return classify(clf, clf.vocab->encode(tokens)); }

/// Per-word toxicity in [0,1]: positive weights divided by the largest one.
struct ToxicityLexicon {
    std::vector<double> scores;

    double score(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= scores.size()) return 0.0;
        return scores[static_cast<std::size_t>(id)];
    }
};

inline ToxicityLexicon lexicon_from(const BowClassifier& clf) {
    double max_pos = 0;
    for (double w : clf.weights) max_pos = std::max(max_pos, w);
    ToxicityLexicon lex{std::vector<double>(clf.weights.size(), 0.0)};
    if (max_pos <= 0) return lex;
    for (std::size_t i = 0; i < clf.weights.size(); ++i) lex.scores[i] = std::max(0.0, clf.weights[i]) / max_pos;
    return lex;
}

inline nlohmann::json to_json(const BowClassifier& clf) {
    return {{"version", 1}, {"vocab", clf.vocab->words()}, {"weights", clf.weights}, {"bias", clf.bias}};
}

inline BowClassifier classifier_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1) throw BundleError("classifier: unsupported version");
    auto vocab = std::make_shared<const Vocabulary>(j.at("vocab").get<std::vector<std::string>>());
    BowClassifier clf{vocab, j.at("weights").get<std::vector<double>>(), j.at("bias").get<double>()};
    if (clf.weights.size() != vocab->size()) throw BundleError("classifier: weight vector does not match vocabulary");
    for (double w : clf.weights)
        if (!std::isfinite(w)) throw BundleError("classifier: non-finite weight");
    return clf;
}

} // namespace detox
