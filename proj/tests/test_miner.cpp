#include <gtest/gtest.h>

#include <chrono>
#include <random>
#include <sstream>

#include "detox/ablation.hpp"
#include "detox/miner.hpp"

using namespace detox;

namespace {

const SyntheticSetup& setup() {
    static const SyntheticSetup s = synthetic_setup();
    return s;
}

struct Row {
    double sim, ld, tox_a, tox_b;
};

// Published mined pairs with their measured quantities; every one passed the filters.
const std::vector<Row>& published_rows() {
    static const std::vector<Row> rows{
        {.78, .01, .01, .98}, {.75, .07, .06, .99}, {.92, .27, .21, .98}, {.66, .31, .05, .99}, {.73, .18, .01, .99},
        {.70, .20, .95, .04}, {.62, .23, .99, .00}, {.72, .19, .96, .15}, {.92, .00, .16, .84}, {.88, .10, .05, .93},
        {.80, .16, .00, .98}, {.75, .01, .84, .14}, {.78, .18, .01, .57}, {.66, .27, .99, .00}, {.61, .36, .00, .99},
        {.79, .15, .01, .99}, {.82, .00, .00, .98}, {.70, .18, .00, .68}, {.81, .10, .00, .76}, {.70, .00, .07, .96},
    };
    return rows;
}

bool passes(double sim, double ld, double ta, double tb, const MinerParams& p = {}) {
    return sim > p.sim_low && sim < p.sim_high && ld <= p.max_len_diff && std::abs(ta - tb) >= p.min_tox_delta;
}

std::optional<RejectReason> reason(const FilterOutcome& o) {
    if (const auto* r = std::get_if<RejectReason>(&o)) return *r;
    return std::nullopt;
}

std::vector<std::string> mixed_lines(std::size_t n, std::uint64_t seed) {
    const auto& c = setup().corpus;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, c.test_toxic.size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = c.test_toxic[pick(rng)];
        const auto& b = c.test_neutral[pick(rng)];
        std::string line = rng() % 2 ? a + "\t" + b : b + "\t" + a;
        if (rng() % 3 == 0) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "\t%.3f", 0.5 + 0.5 * u(rng));
            line += buf;
        }
        lines.push_back(std::move(line));
    }
    return lines;
}

std::string join(const std::vector<std::string>& lines) {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
}

MineStats run_mine(const std::string& input, std::string& output, const MineOptions& options = {}) {
    std::istringstream in(input);
    std::ostringstream out;
    const auto& b = setup().bundle;
    auto stats = mine(in, out, b.classifier, b.embeddings, {}, options);
    output = out.str();
    return stats;
}

} // namespace

// ---------- filters on supplied quantities ----------

TEST(MinerFilter, PublishedRowsAllAccepted) {
    for (std::size_t i = 0; i < published_rows().size(); ++i) {
        const auto& r = published_rows()[i];
        const auto o = filter_precomputed("a", "b", r.sim, r.ld, r.tox_a, r.tox_b);
        ASSERT_TRUE(std::holds_alternative<MinedPair>(o)) << "row " << i;
        const auto& p = std::get<MinedPair>(o);
        EXPECT_GE(p.tox_toxic, p.tox_neutral);
        EXPECT_EQ(p.toxic_side, r.tox_a > r.tox_b ? "a" : "b");
    }
}

TEST(MinerFilter, Boundaries) {
    EXPECT_EQ(reason(filter_precomputed("a", "b", 0.6, 0.1, 0.0, 1.0)), RejectReason::sim_out_of_range);
    EXPECT_EQ(reason(filter_precomputed("a", "b", 0.95, 0.1, 0.0, 1.0)), RejectReason::sim_out_of_range);
    EXPECT_EQ(reason(filter_precomputed("a", "b", 0.50, 0.1, 0.0, 1.0)), RejectReason::sim_out_of_range);
    EXPECT_EQ(reason(filter_precomputed("a", "b", 0.7, 0.41, 0.0, 1.0)), RejectReason::length_difference);
    EXPECT_EQ(reason(filter_precomputed("a", "b", 0.7, 0.1, 0.0, 0.49)), RejectReason::toxicity_delta);
    EXPECT_FALSE(reason(filter_precomputed("a", "b", 0.7, 0.4, 0.0, 1.0)));
    EXPECT_FALSE(reason(filter_precomputed("a", "b", 0.7, 0.1, 0.25, 0.75)));
    EXPECT_FALSE(reason(filter_precomputed("a", "b", 0.6000001, 0.1, 0.0, 1.0)));
    EXPECT_FALSE(reason(filter_precomputed("a", "b", 0.9499999, 0.1, 0.0, 1.0)));
}

TEST(MinerFilter, CheaperFiltersSkipToxicity) {
    int calls = 0;
    auto tox = [&] {
        ++calls;
        return std::pair{0.0, 1.0};
    };
    filter_measured("a", "b", 0.3, 0.0, tox, {});
    filter_measured("a", "b", 0.7, 0.9, tox, {});
    EXPECT_EQ(calls, 0);
    filter_measured("a", "b", 0.7, 0.1, tox, {});
    EXPECT_EQ(calls, 1);
}

TEST(MinerFilter, SymmetricAndMatchesPredicates) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 20000; ++i) {
        const double sim = u(rng), ld = u(rng), ta = u(rng), tb = u(rng);
        const auto ab = filter_precomputed("x", "y", sim, ld, ta, tb);
        const auto ba = filter_precomputed("y", "x", sim, ld, tb, ta);
        ASSERT_EQ(ab.index(), ba.index());
        ASSERT_EQ(std::holds_alternative<MinedPair>(ab), passes(sim, ld, ta, tb));
        if (const auto* p = std::get_if<MinedPair>(&ab)) {
            const auto& q = std::get<MinedPair>(ba);
            EXPECT_EQ(p->toxic_side, q.toxic_side);
            EXPECT_EQ(p->neutral_side, q.neutral_side);
            EXPECT_GE(p->tox_toxic, p->tox_neutral);
        } else {
            EXPECT_EQ(std::get<RejectReason>(ab), std::get<RejectReason>(ba));
        }
    }
}

TEST(MinerFilter, LengthDifference) {
    EXPECT_DOUBLE_EQ(length_difference(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(length_difference(10, 6), 0.4);
    EXPECT_DOUBLE_EQ(length_difference(6, 10), 0.4);
    EXPECT_DOUBLE_EQ(length_difference(0, 3), 1.0);
}

TEST(MinerFilter, InvalidParams) {
    MinerParams p;
    p.sim_low = 0.9;
    p.sim_high = 0.8;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = {};
    p.max_len_diff = 1.5;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = {};
    p.min_tox_delta = -0.1;
    EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(MinerFilter, PairOnRealModelsRechecksPredicates) {
    const auto& b = setup().bundle;
    std::size_t accepted = 0;
    for (const auto& line : mixed_lines(400, 3)) {
        const auto tab = line.find('\t');
        const auto rest = line.substr(tab + 1);
        const auto a = line.substr(0, tab);
        const auto bb = rest.substr(0, rest.find('\t'));
        const auto o = filter_pair(a, bb, b.classifier, b.embeddings);
        if (const auto* p = std::get_if<MinedPair>(&o)) {
            ++accepted;
            EXPECT_TRUE(passes(p->sim, p->len_diff, p->tox_toxic, p->tox_neutral));
            EXPECT_DOUBLE_EQ(p->tox_toxic, classify(b.classifier, tokenize(p->toxic_side)));
            EXPECT_DOUBLE_EQ(p->tox_neutral, classify(b.classifier, tokenize(p->neutral_side)));
            EXPECT_DOUBLE_EQ(p->sim, sentence_similarity(tokenize(a), tokenize(bb), b.embeddings));
        }
    }
    EXPECT_GT(accepted, 0u);
}

TEST(MinerFilter, FormatMined) {
    const MinedPair p{"you idiot", "you person", 0.75, 0.0, 0.98, 0.01};
    EXPECT_EQ(format_mined(p), "you idiot\tyou person\t0.7500\t0.0000\t0.9800\t0.0100");
}

// ---------- streaming ----------

TEST(MinerStream, EmptyAndBlank) {
    std::string out;
    auto s = run_mine("", out);
    EXPECT_EQ(s.seen, 0u);
    EXPECT_TRUE(out.empty());
    s = run_mine("\n  \n\r\n", out);
    EXPECT_EQ(s.seen, 0u);
    EXPECT_EQ(s.malformed, 0u);
}

TEST(MinerStream, MatchesPerLineOracle) {
    const auto lines = mixed_lines(3000, 11);
    const auto& b = setup().bundle;
    MineStats expect;
    std::string expect_out;
    for (const auto& line : lines) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
        std::optional<double> sim;
        if (cols.size() == 3) sim = std::stod(cols[2]);
        ++expect.seen;
        const auto o = filter_pair(cols[0], cols[1], b.classifier, b.embeddings, {}, sim);
        if (const auto* p = std::get_if<MinedPair>(&o)) {
            ++expect.accepted;
            expect_out += format_mined(*p) + "\n";
        } else {
            ++expect.rejected[static_cast<std::size_t>(std::get<RejectReason>(o))];
        }
    }
    for (std::size_t threads : {1u, 3u}) {
        std::string out;
        MineOptions opt;
        opt.threads = threads;
        opt.chunk_lines = 257;
        const auto s = run_mine(join(lines), out, opt);
        EXPECT_EQ(s.seen, expect.seen);
        EXPECT_EQ(s.accepted, expect.accepted);
        EXPECT_EQ(s.rejected, expect.rejected);
        EXPECT_EQ(out, expect_out);
    }
    EXPECT_GT(expect.accepted, 0u);
    EXPECT_GT(expect.rejected_for(RejectReason::sim_out_of_range), 0u);
}

TEST(MinerStream, DuplicatesCountedIndependently) {
    const auto line = mixed_lines(1, 2).front();
    std::string one, three;
    const auto s1 = run_mine(line + "\n", one);
    const auto s3 = run_mine(line + "\n" + line + "\n" + line + "\n", three);
    EXPECT_EQ(s3.seen, 3u);
    EXPECT_EQ(s3.accepted, 3 * s1.accepted);
    EXPECT_EQ(three, one + one + one);
}

TEST(MinerStream, Malformed) {
    const std::string input = "only one column\nok a\tok b\na\tb\tc\td\nx\ty\tnot-a-number\nx\ty\tinf\n";
    std::string out;
    const auto s = run_mine(input, out);
    EXPECT_EQ(s.seen, 5u);
    EXPECT_EQ(s.malformed, 4u);

    MineOptions strict;
    strict.strict = true;
    try {
        run_mine(input, out, strict);
        FAIL() << "strict mode should abort";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
    std::string tail = "a\tb\t0.3\nbroken\n";
    try {
        run_mine(tail, out, strict);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(MinerStream, ConcatenationIsUnion) {
    const auto s1 = mixed_lines(500, 21);
    const auto s2 = mixed_lines(700, 22);
    std::string o1, o2, o12;
    auto a = run_mine(join(s1), o1);
    const auto b = run_mine(join(s2), o2);
    const auto ab = run_mine(join(s1) + join(s2), o12);
    a += b;
    EXPECT_EQ(ab.seen, a.seen);
    EXPECT_EQ(ab.accepted, a.accepted);
    EXPECT_EQ(ab.rejected, a.rejected);
    EXPECT_EQ(o12, o1 + o2);
}

TEST(MinerStream, MillionLinesUnderOneMinute) {
    const auto base = mixed_lines(1000, 31);
    std::string chunk = join(base);
    std::string input;
    input.reserve(chunk.size() * 1000);
    for (int i = 0; i < 1000; ++i) input += chunk;
    std::string out;
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = run_mine(input, out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_EQ(s.seen, 1000000u);
    EXPECT_LT(secs, 60.0);
}
