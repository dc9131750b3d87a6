#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "detox/error.hpp"

namespace detox {

/// Stand-in for log(0) in every distribution.
inline constexpr double kLogFloor = -30.0;

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(xs.begin(), xs.end());
    if (!std::isfinite(m)) return m;
    double s = 0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double floored_log(double p) { return p > 0 ? std::max(std::log(p), kLogFloor) : kLogFloor; }

/// Log-probabilities over a vocabulary at one decoding step or slot.
class TokenDistribution {
public:
    TokenDistribution() = default;

    explicit TokenDistribution(std::vector<double> logprobs) : logp_(std::move(logprobs)) {}

    /// Takes probabilities that already sum to one; zeros become the log floor.
    static TokenDistribution from_probs(std::span<const double> probs) {
        std::vector<double> lp(probs.size());
        std::transform(probs.begin(), probs.end(), lp.begin(), floored_log);
        return TokenDistribution(std::move(lp));
    }

    /// Normalizes arbitrary scores by log-softmax.
    static TokenDistribution from_scores(std::vector<double> scores) {
        const double z = log_sum_exp(scores);
        for (auto& s : scores) s = std::max(s - z, kLogFloor);
        return TokenDistribution(std::move(scores));
    }

    static TokenDistribution uniform(std::size_t n) {
        return TokenDistribution(std::vector<double>(n, -std::log(static_cast<double>(n))));
    }

    std::size_t size() const noexcept { return logp_.size(); }
    double logprob(std::size_t id) const { return logp_.at(id); }
    double prob(std::size_t id) const { return std::exp(logp_.at(id)); }
    const std::vector<double>& logprobs() const noexcept { return logp_; }

    std::vector<double> probs() const {
        std::vector<double> p(logp_.size());
        std::transform(logp_.begin(), logp_.end(), p.begin(), [](double x) { return std::exp(x); });
        return p;
    }

    double total_mass() const {
        double s = 0;
        for (double x : logp_) s += std::exp(x);
        return s;
    }

    std::size_t argmax() const {
        return static_cast<std::size_t>(std::max_element(logp_.begin(), logp_.end()) - logp_.begin());
    }

    bool is_normalized(double tol = 1e-9) const {
        if (logp_.empty()) return false;
        for (double x : logp_)
            if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) return false;
        return std::abs(total_mass() - 1.0) <= tol;
    }

    bool operator==(const TokenDistribution&) const = default;

private:
    std::vector<double> logp_;
};

} // namespace detox
