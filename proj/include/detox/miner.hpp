#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "detox/classifier.hpp"
#include "detox/embeddings.hpp"
#include "detox/text.hpp"

namespace detox {

struct MinerParams {
    double sim_low = 0.6;  // exclusive
    double sim_high = 0.95;  // exclusive
    double max_len_diff = 0.4;  // inclusive
    double min_tox_delta = 0.5;  // inclusive

    void validate() const {
        if (!(sim_low >= 0 && sim_low < sim_high && sim_high <= 1)) throw InvalidArgument("miner: need 0 <= sim_low < sim_high <= 1");
        if (!(max_len_diff >= 0 && max_len_diff <= 1)) throw InvalidArgument("miner: max_len_diff must be in [0,1]");
        if (!(min_tox_delta >= 0 && min_tox_delta <= 1)) throw InvalidArgument("miner: min_tox_delta must be in [0,1]");
    }
};

enum class RejectReason { sim_out_of_range, length_difference, toxicity_delta };
inline constexpr std::size_t kRejectReasons = 3;

inline const char* to_string(RejectReason r) {
    switch (r) {
    case RejectReason::sim_out_of_range: return "sim_out_of_range";
    case RejectReason::length_difference: return "length_difference";
    case RejectReason::toxicity_delta: return "toxicity_delta";
    }
    return "?";
}

struct MinedPair {
    std::string toxic_side;
    std::string neutral_side;
    double sim = 0;
    double len_diff = 0;
    double tox_toxic = 0;
    double tox_neutral = 0;
};

using FilterOutcome = std::variant<MinedPair, RejectReason>;

/// |n_a - n_b| / max(n_a, n_b) over token counts; 0 when both are empty.
inline double length_difference(std::size_t na, std::size_t nb) {
    const auto hi = std::max(na, nb);
    if (hi == 0) return 0.0;
    return static_cast<double>(na > nb ? na - nb : nb - na) / static_cast<double>(hi);
}

/// The three filters applied to already-measured quantities. Toxicity is only requested when the
/// cheaper filters pass.
template <class ToxFn>
FilterOutcome filter_measured(const std::string& a, const std::string& b, double sim, double len_diff, ToxFn&& toxicity,
                              const MinerParams& params) {
    if (!(sim > params.sim_low && sim < params.sim_high)) return RejectReason::sim_out_of_range;
    if (!(len_diff <= params.max_len_diff)) return RejectReason::length_difference;
    const auto [tox_a, tox_b] = toxicity();
    if (!(std::abs(tox_a - tox_b) >= params.min_tox_delta)) return RejectReason::toxicity_delta;
    if (tox_b > tox_a) return MinedPair{b, a, sim, len_diff, tox_b, tox_a};
    return MinedPair{a, b, sim, len_diff, tox_a, tox_b};
}

/// Replay form: all four quantities supplied by the caller.
inline FilterOutcome filter_precomputed(const std::string& a, const std::string& b, double sim, double len_diff, double tox_a,
                                        double tox_b, const MinerParams& params = {}) {
    return filter_measured(a, b, sim, len_diff, [&] { return std::pair{tox_a, tox_b}; }, params);
}

/// Similarity from averaged word vectors (unless `precomputed_sim` is given), length difference over
/// token counts, toxicity from the classifier.
inline FilterOutcome filter_pair(const std::string& a, const std::string& b, const BowClassifier& clf, const EmbeddingTable& emb,
                                 const MinerParams& params = {}, std::optional<double> precomputed_sim = std::nullopt,
                                 const TokenizerConfig& tok = {}) {
    const auto ta = tokenize(a, tok);
    const auto tb = tokenize(b, tok);
    const double sim = precomputed_sim ? *precomputed_sim : sentence_similarity(ta, tb, emb);
    return filter_measured(a, b, sim, length_difference(ta.size(), tb.size()),
                           [&] { return std::pair{classify(clf, ta), classify(clf, tb)}; }, params);
}

struct MineStats {
    std::size_t seen = 0;
    std::size_t accepted = 0;
    std::size_t malformed = 0;
    std::array<std::size_t, kRejectReasons> rejected{};

    MineStats& operator+=(const MineStats& o) {
        seen += o.seen;
        accepted += o.accepted;
        malformed += o.malformed;
        for (std::size_t i = 0; i < kRejectReasons; ++i) rejected[i] += o.rejected[i];
        return *this;
    }

    std::size_t rejected_for(RejectReason r) const { return rejected[static_cast<std::size_t>(r)]; }
};

inline std::string format_mined(const MinedPair& p) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "\t%.4f\t%.4f\t%.4f\t%.4f", p.sim, p.len_diff, p.tox_toxic, p.tox_neutral);
    return p.toxic_side + "\t" + p.neutral_side + buf;
}

namespace detail {

struct MineLineResult {
    enum class Kind { blank, malformed, outcome } kind = Kind::blank;
    FilterOutcome outcome = RejectReason::sim_out_of_range;
    std::string error;
};

inline MineLineResult mine_line(std::string line, const BowClassifier& clf, const EmbeddingTable& emb, const MinerParams& params,
                                const TokenizerConfig& tok) {
    MineLineResult r;
    strip_cr(line);
    if (is_blank(line)) return r;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    if (cols.size() < 2 || cols.size() > 3) {
        r.kind = MineLineResult::Kind::malformed;
        r.error = "expected 2 or 3 tab-separated columns";
        return r;
    }
    std::optional<double> sim;
    if (cols.size() == 3) {
        try {
            std::size_t used = 0;
            sim = std::stod(cols[2], &used);
            if (used != cols[2].size() || !std::isfinite(*sim)) throw std::invalid_argument(cols[2]);
        } catch (const std::exception&) {
            r.kind = MineLineResult::Kind::malformed;
            r.error = "bad similarity '" + cols[2] + "'";
            return r;
        }
    }
    r.kind = MineLineResult::Kind::outcome;
    r.outcome = filter_pair(cols[0], cols[1], clf, emb, params, sim, tok);
    return r;
}

} // namespace detail

struct MineOptions {
    bool strict = false;  // abort on the first malformed line instead of counting it
    std::size_t threads = 1;
    std::size_t chunk_lines = 4096;
};

/// Streams `a<TAB>b[<TAB>sim]` lines, writing accepted pairs in input order. Memory is bounded by one chunk.
inline MineStats mine(std::istream& in, std::ostream& out, const BowClassifier& clf, const EmbeddingTable& emb,
                      const MinerParams& params = {}, const MineOptions& options = {}, const TokenizerConfig& tok = {}) {
    params.validate();
    MineStats stats;
    std::vector<std::string> chunk;
    std::vector<detail::MineLineResult> results;
    std::size_t line_no = 0;
    const std::size_t threads = std::max<std::size_t>(1, options.threads);

    auto flush = [&] {
        results.assign(chunk.size(), {});
        if (threads == 1 || chunk.size() < 2 * threads) {
            for (std::size_t i = 0; i < chunk.size(); ++i) results[i] = detail::mine_line(chunk[i], clf, emb, params, tok);
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < threads; ++t)
                pool.emplace_back([&, t] {
                    for (std::size_t i = t; i < chunk.size(); i += threads) results[i] = detail::mine_line(chunk[i], clf, emb, params, tok);
                });
        }
        const std::size_t first_line = line_no - chunk.size() + 1;
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& r = results[i];
            if (r.kind == detail::MineLineResult::Kind::blank) continue;
            ++stats.seen;
            if (r.kind == detail::MineLineResult::Kind::malformed) {
                if (options.strict) throw ParseError(first_line + i, r.error);
                ++stats.malformed;
                continue;
            }
            if (const auto* pair = std::get_if<MinedPair>(&r.outcome)) {
                ++stats.accepted;
                out << format_mined(*pair) << '\n';
            } else {
                ++stats.rejected[static_cast<std::size_t>(std::get<RejectReason>(r.outcome))];
            }
        }
        chunk.clear();
    };

    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        chunk.push_back(std::move(line));
        if (chunk.size() >= options.chunk_lines) flush();
    }
    flush();
    return stats;
}

} // namespace detox
