#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "detox/ablation.hpp"
#include "detox/metrics.hpp"
#include "detox/report.hpp"
#include "support.hpp"

using namespace detox;

namespace {

SentenceEval triple(double acc, double sim, double fl) {
    SentenceEval e;
    e.acc = acc;
    e.sim = sim;
    e.fl = fl;
    e.j = acc * sim * fl;
    return e;
}

// Student t CDF for three degrees of freedom, closed form.
double t3_cdf(double t) {
    const double s3 = std::sqrt(3.0);
    return 0.5 + (t / (s3 * (1 + t * t / 3)) + std::atan(t / s3)) / std::numbers::pi;
}

std::vector<Tokens> toks(const std::vector<std::string>& lines) {
    std::vector<Tokens> out;
    for (const auto& l : lines) out.push_back(tokenize(l));
    return out;
}

} // namespace

// ---------- sentence-level scores ----------

TEST(SentenceEval, ProductOfComponents) {
    auto vocab = test::vocab_of({"x", "y"});
    BowClassifier clf{vocab, std::vector<double>(vocab->size(), 0.0), std::log(0.1 / 0.9)};
    EmbeddingTable emb(2);
    emb.add("x", std::vector<double>{1, 0});
    emb.add("y", std::vector<double>{0.8, 0.6});
    const NgramLM lm(vocab, {2, 0.1, true});
    const FluencyScorer always{FluencyMethod::lm_threshold, &lm, 100.0, nullptr};
    const FluencyScorer never{FluencyMethod::lm_threshold, &lm, 0.0, nullptr};

    const auto e = sentence_eval({"x"}, {"y"}, clf, emb, always);
    EXPECT_EQ(e.acc, 1.0);
    EXPECT_NEAR(e.acc_soft, 0.9, 1e-12);
    EXPECT_NEAR(e.sim, 0.8, 1e-12);
    EXPECT_EQ(e.fl, 1.0);
    EXPECT_NEAR(e.j, 0.8, 1e-12);

    BowClassifier toxic = clf;
    toxic.bias = 3;
    const auto z = sentence_eval({"x"}, {"y"}, toxic, emb, always);
    EXPECT_EQ(z.acc, 0.0);
    EXPECT_EQ(z.j, 0.0);

    const auto id = sentence_eval({"x", "y"}, {"x", "y"}, clf, emb, never);
    EXPECT_NEAR(id.sim, 1.0, 1e-12);
    EXPECT_EQ(id.acc, 1.0);
    EXPECT_EQ(id.j, id.fl);
    EXPECT_EQ(FluencyScorer{}(Tokens{}), 0.0);
}

TEST(Fluency, ClassifierModeSeparatesWordSalad) {
    LabeledCorpus c;
    c.classes = acceptability_classes();
    std::mt19937_64 rng(51);
    const auto s = make_synthetic({.train_per_class = 300, .heldout_per_class = 10, .test_toxic = 10});
    for (const auto& r : s.train.records) {
        c.records.push_back({1, r.tokens});
        Tokens shuffled = r.tokens;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        c.records.push_back({0, shuffled});
    }
    const auto clf = train_fluency_classifier(c);
    const FluencyScorer scorer{FluencyMethod::classifier, nullptr, 0, &clf};
    std::size_t ok = 0, salad = 0;
    for (const auto& line : s.test_neutral) {
        auto t = tokenize(line);
        ok += scorer(t) == 1.0;
        std::shuffle(t.begin(), t.end(), rng);
        salad += scorer(t) == 0.0;
    }
    EXPECT_GE(ok, 9u);
    EXPECT_GE(salad, 9u);
    EXPECT_THROW((FluencyScorer{FluencyMethod::classifier, nullptr, 0, nullptr}({"a"})), InvalidArgument);
}

// ---------- J ----------

TEST(JScore, MeanOfProductsNotProductOfMeans) {
    std::vector<SentenceEval> evals;
    for (int i = 0; i < 50; ++i) {
        evals.push_back(triple(1, 1, 1));
        evals.push_back(triple(0.88, 0.38, 0.54));
    }
    double acc = 0, sim = 0, fl = 0;
    for (const auto& e : evals) {
        acc += e.acc / 100;
        sim += e.sim / 100;
        fl += e.fl / 100;
    }
    EXPECT_NEAR(acc, 0.94, 1e-12);
    EXPECT_NEAR(sim, 0.69, 1e-12);
    EXPECT_NEAR(fl, 0.77, 1e-12);
    const double mean_of_products = (1 + 0.88 * 0.38 * 0.54) / 2;
    const auto j = j_score(evals, 3);
    EXPECT_NEAR(j.mean, mean_of_products, 1e-12);
    EXPECT_GT(std::abs(j.mean - acc * sim * fl), 0.05);
}

TEST(JScore, HandValuesAndBounds) {
    const std::vector<SentenceEval> two{triple(1, 0.8, 1), triple(0, 0.5, 1)};
    EXPECT_NEAR(j_score(two).mean, 0.4, 1e-15);
    const std::vector<SentenceEval> flat(20, triple(1, 0.7, 1));
    EXPECT_NEAR(j_score(flat).ci_half_width, 0.0, 1e-15);
    EXPECT_THROW(j_score(std::vector<SentenceEval>{}), InvalidArgument);

    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<SentenceEval> evals;
        for (std::size_t i = 1 + rng() % 30; i > 0; --i) evals.push_back(triple(rng() % 2, u(rng), u(rng)));
        const auto j = j_score(evals, 9);
        double lo = 1, hi = 0;
        for (const auto& e : evals) {
            lo = std::min(lo, e.j);
            hi = std::max(hi, e.j);
        }
        EXPECT_GE(j.mean, lo - 1e-15);
        EXPECT_LE(j.mean, hi + 1e-15);
        EXPECT_LE(j.ci_low, j.ci_high);
        EXPECT_EQ(j.ci_low, j_score(evals, 9).ci_low);
    }
}

// ---------- BLEU ----------

TEST(Bleu, HandCase) {
    const double expected = std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
    const double got = bleu({tokenize("a b c d e")}, {tokenize("a b c d f")});
    EXPECT_NEAR(got, 0.6687, 1e-4);
    EXPECT_NEAR(got, expected, 1e-12);
}

TEST(Bleu, IdentityZeroOverlapAndErrors) {
    const auto corpus = toks({"the cat sat on the mat", "a b c d", "one two three four five"});
    EXPECT_NEAR(bleu(corpus, corpus), 1.0, 1e-12);
    EXPECT_EQ(bleu(toks({"x y z w"}), toks({"a b c d"})), 0.0);
    EXPECT_THROW(bleu(corpus, toks({"a"})), InvalidArgument);
}

TEST(Bleu, BrevityPenaltyAndSmoothing) {
    // Candidate of 4 tokens against a 6-token reference: all four orders match fully.
    const double bp = std::exp(1 - 6.0 / 4.0);
    EXPECT_NEAR(bleu(toks({"a b c d"}), toks({"a b c d e f"})), bp, 1e-12);
    // "a c b" vs "b a c": unigrams 3/3, bigrams 1/2, trigram 0/1 smoothed to 1/2, empty 4-gram order smoothed to 1/1.
    EXPECT_NEAR(bleu(toks({"a c b"}), toks({"b a c"})), std::pow(1.0 * 0.5 * 0.5 * 1.0, 0.25), 1e-12);
}

TEST(Bleu, ReorderingInvariantAndMonotoneUnderCorruption) {
    auto s = make_synthetic({.train_per_class = 20, .heldout_per_class = 1, .test_toxic = 1});
    const auto refs = s.train.sentences();
    std::vector<Tokens> cands = refs;
    std::mt19937_64 rng(53);
    for (auto& c : cands)
        if (rng() % 2) c[rng() % c.size()] = "zzz";
    const double base = bleu(cands, refs);
    std::vector<std::size_t> order(refs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tokens> c2, r2;
    for (auto i : order) {
        c2.push_back(cands[i]);
        r2.push_back(refs[i]);
    }
    EXPECT_NEAR(bleu(c2, r2), base, 1e-12);

    const auto ref = tokenize("the quick brown fox jumps over the lazy dog today");
    const Tokens cand = ref;
    Tokens corrupted = ref;
    double prev = bleu({cand}, {corrupted});
    for (std::size_t i = 0; i < corrupted.size(); ++i) {
        corrupted[i] = "#" + std::to_string(i);
        const double now = bleu({cand}, {corrupted});
        EXPECT_LE(now, prev + 1e-15);
        prev = now;
    }
}

// ---------- correlation ----------

TEST(Spearman, HandCasesAndErrors) {
    EXPECT_DOUBLE_EQ(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5);
    EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 4}), 1.0, 1e-15);
    EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}), -1.0, 1e-15);
    EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
    EXPECT_THROW(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DegenerateInput);
    EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), InvalidArgument);
}

TEST(Spearman, InvariantUnderMonotoneTransforms) {
    std::mt19937_64 rng(54);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + rng() % 20;
        std::vector<double> x(n), y(n), fx(n), gy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = std::round(g(rng) * 3);
            y[i] = x[i] + g(rng);
            fx[i] = std::exp(x[i]) + 5;
            gy[i] = -1 / (1 + std::exp(-y[i]));
        }
        double rho;
        try {
            rho = spearman(x, y);
        } catch (const DegenerateInput&) {
            continue;
        }
        EXPECT_NEAR(spearman(fx, y), rho, 1e-12);
        EXPECT_NEAR(spearman(x, gy), -rho, 1e-12);
    }
}

// ---------- paired t-test ----------

TEST(TTest, HandCaseAgainstClosedFormCdf) {
    const std::vector<double> a{2, 2, 2, 0}, b{1, 1, 1, 1};
    const auto r = paired_t_test(a, b);
    EXPECT_NEAR(r.t, 1.0, 1e-15);
    EXPECT_EQ(r.dof, 3u);
    EXPECT_NEAR(r.mean_diff, 0.5, 1e-15);
    EXPECT_NEAR(r.p, 2 * (1 - t3_cdf(1.0)), 1e-12);
}

TEST(TTest, AntisymmetryAndDegenerateInput) {
    std::mt19937_64 rng(55);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(4), b(4);
        for (std::size_t i = 0; i < 4; ++i) {
            a[i] = g(rng);
            b[i] = g(rng);
        }
        const auto ab = paired_t_test(a, b), ba = paired_t_test(b, a);
        EXPECT_NEAR(ab.t, -ba.t, 1e-12);
        EXPECT_NEAR(ab.p, ba.p, 1e-12);
        EXPECT_NEAR(ab.p, 2 * (1 - t3_cdf(std::abs(ab.t))), 1e-9);
    }
    const std::vector<double> same{1, 2, 3};
    EXPECT_THROW(paired_t_test(same, same), DegenerateInput);
    EXPECT_THROW(paired_t_test(same, std::vector<double>{1, 2}), InvalidArgument);
}

// ---------- misc ----------

TEST(TokenPreservation, LongestCommonSubsequenceShare) {
    EXPECT_DOUBLE_EQ(token_preservation({"a", "b", "c", "d"}, {"a", "x", "c", "d"}), 0.75);
    EXPECT_DOUBLE_EQ(token_preservation({"a", "b"}, {}), 0.0);
    EXPECT_DOUBLE_EQ(token_preservation({}, {"a"}), 1.0);
}

TEST(Report, SystemAveragesAndJson) {
    const auto setup = synthetic_setup();
    const auto& b = setup.bundle;
    std::vector<Tokens> src, out;
    for (std::size_t i = 0; i < 40; ++i) {
        src.push_back(tokenize(setup.corpus.test_toxic[i]));
        out.push_back(tokenize(i % 2 ? setup.corpus.test_neutral[i] : setup.corpus.test_toxic[i]));
    }
    const auto r = evaluate_system("mixed", src, out, eval_models(b), {}, 4);
    ASSERT_EQ(r.sentences.size(), 40u);
    double acc = 0, j = 0;
    for (const auto& e : r.sentences) {
        EXPECT_DOUBLE_EQ(e.j, e.acc * e.sim * e.fl);
        acc += e.acc / 40;
        j += e.j / 40;
    }
    EXPECT_NEAR(r.acc, acc, 1e-12);
    EXPECT_NEAR(r.j.mean, j, 1e-12);
    EXPECT_GT(r.acc, 0.3);
    EXPECT_LT(r.acc, 0.7);

    const auto js = to_json(r);
    for (const char* key : {"schema_version", "name", "n", "acc", "acc_soft", "sim", "fl", "j", "j_ci_half_width", "success_rate", "sentences"})
        EXPECT_TRUE(js.contains(key)) << key;
    EXPECT_FALSE(to_json(r, false).contains("sentences"));
    EXPECT_NE(format_table({r}).find("mixed"), std::string::npos);
    EXPECT_THROW(evaluate_system("x", src, {}, eval_models(b)), InvalidArgument);
    EXPECT_THROW(evaluate_system("x", {}, {}, eval_models(b)), InvalidArgument);
}
