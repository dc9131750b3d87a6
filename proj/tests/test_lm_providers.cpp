#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "detox/masked_slot.hpp"
#include "detox/ngram.hpp"
#include "detox/paraphraser.hpp"
#include "detox/remote.hpp"
#include "detox/trainable_cclm.hpp"
#include "oracles.hpp"

using namespace detox;
using namespace detox::test;

// ---------- n-gram ----------

TEST(Ngram, HandCountArithmetic) {
    const std::vector<Tokens> corpus{{"a", "b"}};
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(corpus));
    ASSERT_EQ(vocab->size(), 6u);
    const auto lm = train_ngram(corpus, vocab, {2, 1.0, false});
    const int a = vocab->id("a"), b = vocab->id("b");
    EXPECT_NEAR(lm.next_logprobs({a}).prob(static_cast<std::size_t>(b)), 2.0 / 7.0, 1e-12);
    EXPECT_NEAR(std::exp(lm.logprob({a}, b)), 2.0 / 7.0, 1e-12);
    // context "b" was never followed by anything
    const auto unseen = lm.next_logprobs({b});
    for (std::size_t i = 0; i < vocab->size(); ++i) EXPECT_NEAR(unseen.prob(i), 1.0 / 6.0, 1e-12);
}

TEST(Ngram, VanishingSmoothingConcentratesMass) {
    const std::vector<Tokens> corpus{{"a"}};
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(corpus));
    const auto lm = train_ngram(corpus, vocab, {1, 1e-9, false});
    EXPECT_GT(lm.next_logprobs({}).prob(static_cast<std::size_t>(vocab->id("a"))), 1 - 1e-6);
}

TEST(Ngram, EveryContextIsAProperDistribution) {
    std::mt19937_64 rng(21);
    const std::vector<std::string> words{"a", "b", "c", "d", "e", "f"};
    std::uniform_int_distribution<std::size_t> w(0, words.size() - 1), len(1, 6);
    std::vector<Tokens> corpus;
    for (int i = 0; i < 40; ++i) {
        Tokens s;
        for (std::size_t j = len(rng); j > 0; --j) s.push_back(words[w(rng)]);
        corpus.push_back(s);
    }
    auto vocab = test::vocab_of(words);
    ASSERT_LE(vocab->size(), 10u);
    const int v = static_cast<int>(vocab->size());
    for (int order : {1, 2, 3}) {
        const auto lm = train_ngram(corpus, vocab, {order, 0.3, true});
        std::vector<TokenIds> contexts{{}};
        for (int depth = 0; depth < order - 1; ++depth) {
            std::vector<TokenIds> next;
            for (const auto& c : contexts)
                for (int id = 0; id < v; ++id) {
                    auto e = c;
                    e.push_back(id);
                    next.push_back(e);
                }
            contexts = next;
        }
        for (const auto& ctx : contexts) {
            double total = 0;
            for (int id = 0; id < v; ++id) {
                const double p = std::exp(lm.logprob(ctx, id));
                ASSERT_GT(p, 0.0);
                total += p;
            }
            ASSERT_NEAR(total, 1.0, 1e-12);
            ASSERT_TRUE(lm.next_logprobs(ctx).is_normalized());
        }
    }
}

TEST(Ngram, RejectsBadOptionsAndEmptyCorpus) {
    auto vocab = test::vocab_of({"a"});
    EXPECT_THROW(train_ngram({}, vocab), InvalidArgument);
    EXPECT_THROW(NgramLM(vocab, {0, 0.1, false}), InvalidArgument);
    EXPECT_THROW(NgramLM(vocab, {2, 0.0, false}), InvalidArgument);
}

TEST(Ngram, JsonRoundTripAndVocabularyCheck) {
    const std::vector<Tokens> corpus{{"a", "b", "c"}, {"c", "b"}};
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(corpus));
    const auto lm = train_ngram(corpus, vocab, {3, 0.2, true});
    const auto j = nlohmann::json::parse(to_json(lm).dump());
    EXPECT_EQ(ngram_from_json(j, vocab), lm);
    EXPECT_EQ(ngram_from_json(j), lm);
    EXPECT_THROW(ngram_from_json(j, test::vocab_of({"x"})), VocabularyMismatch);
}

TEST(ClassConditional, PerClassDistributions) {
    LabeledCorpus corpus;
    corpus.records = {{kToxic, {"you", "idiot"}}, {kNeutral, {"you", "friend"}}};
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(corpus.sentences()));
    const auto cc = train_class_conditional(corpus, vocab, {2, 1.0, false});
    const int you = vocab->id("you");
    const double v = static_cast<double>(vocab->size());
    EXPECT_NEAR(cc_next_logprobs(cc, kToxic, {you}).prob(static_cast<std::size_t>(vocab->id("idiot"))), 2 / (1 + v), 1e-12);
    EXPECT_NEAR(cc_next_logprobs(cc, kNeutral, {you}).prob(static_cast<std::size_t>(vocab->id("idiot"))), 1 / (1 + v), 1e-12);
    EXPECT_NEAR(cc_next_logprobs(cc, kNeutral, {vocab->id("friend")}).prob(0), 1 / v, 1e-12);
    EXPECT_THROW(cc_next_logprobs(cc, 2, {}), InvalidArgument);
    EXPECT_THROW(cc_next_logprobs(cc, -1, {}), InvalidArgument);
    EXPECT_EQ(cclm_from_json(nlohmann::json::parse(to_json(cc).dump()), vocab), cc);

    LabeledCorpus one_class;
    one_class.records = {{kToxic, {"x"}}};
    EXPECT_THROW(train_class_conditional(one_class, vocab, {}), DegenerateInput);
    EXPECT_THROW(ClassConditionalLM({train_ngram({{"x"}}, vocab)}, {0.5, 0.6}), InvalidArgument);
}

// ---------- paraphraser ----------

TEST(Paraphraser, MixtureIdentities) {
    auto vocab = test::vocab_of({"a", "b", "c"});
    const NgramLM base = train_ngram({{"a", "b", "c"}, {"c", "a"}}, vocab, {2, 0.5, true});
    EmbeddingTable emb(2);
    const TokenIds source{vocab->id("a"), vocab->id("b")};
    const TokenIds prefix{vocab->id("c")};

    CopyParams none{0.0, 0, false, 50, 3};
    const auto same = paraphrase_logprobs(source, prefix, none, emb, base);
    EXPECT_EQ(same.logprobs(), base.next_logprobs(prefix).logprobs());

    CopyParams all{1.0, 0, false, 50, 3};
    const auto copy = paraphrase_logprobs(source, prefix, all, emb, base);
    EXPECT_NEAR(copy.prob(static_cast<std::size_t>(vocab->id("a"))), 0.5, 1e-12);
    EXPECT_NEAR(copy.prob(static_cast<std::size_t>(vocab->id("b"))), 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(copy.logprob(static_cast<std::size_t>(vocab->id("c"))), kLogFloor);
    EXPECT_DOUBLE_EQ(copy.logprob(Vocabulary::eos), kLogFloor);

    EXPECT_THROW(paraphrase_logprobs(source, prefix, {1.5, 0, false, 50, 3}, emb, base), InvalidArgument);
}

TEST(Paraphraser, HalfMixtureHandArithmetic) {
    // |V| = 4, base uniform, all copy mass on one id: 0.5 * 1 + 0.5 * 0.25.
    const std::vector<double> copy{0, 0, 0, 1};
    const auto d = detail::mix_copy(copy, TokenDistribution::uniform(4), 0.5);
    EXPECT_NEAR(d.prob(3), 0.625, 1e-12);
    EXPECT_NEAR(d.prob(0), 0.125, 1e-12);

    // Same rule through the public entry point with |V| = 5 and an untrained (uniform) base.
    auto vocab = test::vocab_of({"a"});
    const NgramLM base(vocab, {2, 0.1, false});
    const auto p = paraphrase_logprobs({vocab->id("a")}, {}, {0.5, 0, false, 50, 3}, EmbeddingTable(2), base);
    EXPECT_NEAR(p.prob(static_cast<std::size_t>(vocab->id("a"))), 0.5 + 0.5 / 5, 1e-12);
}

TEST(Paraphraser, NeighborsShareCopyMass) {
    auto vocab = test::vocab_of({"a", "b", "c"});
    EmbeddingTable emb(2);
    emb.add("a", std::vector<double>{1, 0});
    emb.add("b", std::vector<double>{0.9, 0.1});
    emb.add("c", std::vector<double>{0, 1});
    const NgramLM base(vocab, {2, 0.1, false});
    const auto p = paraphrase_logprobs({vocab->id("a")}, {}, {1.0, 1, false, 50, 3}, emb, base);
    EXPECT_NEAR(p.prob(static_cast<std::size_t>(vocab->id("a"))), 0.5, 1e-12);
    EXPECT_NEAR(p.prob(static_cast<std::size_t>(vocab->id("b"))), 0.5, 1e-12);
}

TEST(Paraphraser, AlignedCopyFollowsSourcePointer) {
    auto vocab = test::vocab_of({"a", "b", "c"});
    const int a = vocab->id("a"), b = vocab->id("b"), c = vocab->id("c");
    const TokenIds source{a, b, c};
    NeighborIndex index;
    index.neighbors.resize(vocab->size());
    CopyParams params{0.5, 0, true, 100, 3};
    EXPECT_EQ(detail::aligned_position(source, {}, index, 0, 3), 0u);
    EXPECT_EQ(detail::aligned_position(source, {a}, index, 0, 3), 1u);
    EXPECT_EQ(detail::aligned_position(source, {c}, index, 0, 3), 3u);
    EXPECT_EQ(detail::aligned_position(source, {c}, index, 0, 2), 0u);

    const auto start = detail::aligned_copy_distribution(source, {}, vocab->size(), params, index);
    EXPECT_DOUBLE_EQ(start[static_cast<std::size_t>(a)], 0.5);
    EXPECT_DOUBLE_EQ(start[static_cast<std::size_t>(b)], 0.5);
    const auto end = detail::aligned_copy_distribution(source, {a, b, c}, vocab->size(), params, index);
    EXPECT_DOUBLE_EQ(end[Vocabulary::eos], 1.0);

    const auto boosted = detail::boost_copy(start, TokenDistribution::uniform(vocab->size()), 100);
    EXPECT_TRUE(boosted.is_normalized());
    EXPECT_NEAR(boosted.prob(static_cast<std::size_t>(a)) / boosted.prob(static_cast<std::size_t>(c)), 51.0, 1e-9);
}

// ---------- masked slot ----------

TEST(MaskedSlot, BidirectionalContextPicksTheFiller) {
    const std::vector<Tokens> corpus{{"the", "dog", "ran"}, {"a", "cat", "sat"}, {"the", "dog", "ran"}};
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(corpus));
    const auto model = train_masked_slot(corpus, vocab, 1e-6);
    const auto d = masked_logprobs(model, vocab->id("the"), vocab->id("ran"));
    EXPECT_EQ(static_cast<int>(d.argmax()), vocab->id("dog"));
    EXPECT_TRUE(d.is_normalized());
}

TEST(MaskedSlot, MissingSideAndExtremeWeights) {
    const std::vector<Tokens> corpus{{"x", "y", "z"}, {"y", "x"}, {"z", "z", "y"}};
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(corpus));
    const int x = vocab->id("x"), y = vocab->id("y"), z = vocab->id("z");
    const auto model = train_masked_slot(corpus, vocab, 0.5, 0.3);
    EXPECT_EQ(masked_logprobs(model, x, std::nullopt).logprobs(), model.forward_logprobs(x).logprobs());
    EXPECT_EQ(masked_logprobs(model, std::nullopt, y).logprobs(), model.reverse_logprobs(y).logprobs());
    EXPECT_THROW(masked_logprobs(model, std::nullopt, std::nullopt), InvalidArgument);

    const auto mixed = masked_logprobs(model, x, z);
    for (std::size_t i = 0; i < vocab->size(); ++i)
        EXPECT_NEAR(mixed.prob(i), 0.3 * model.forward_logprobs(x).prob(i) + 0.7 * model.reverse_logprobs(z).prob(i), 1e-12);

    const auto left_only = train_masked_slot(corpus, vocab, 0.5, 1.0);
    EXPECT_EQ(masked_logprobs(left_only, x, z).logprobs(), masked_logprobs(left_only, x, y).logprobs());
    EXPECT_THROW(train_masked_slot(corpus, vocab, 0.5, 1.5), InvalidArgument);
    EXPECT_EQ(masked_slot_from_json(nlohmann::json::parse(to_json(model).dump()), vocab), model);
}

// ---------- trainable class-conditional LM ----------


TEST(TrainableCclm, GenerativeLossHandCases) {
    auto vocab = test::vocab_of({"a", "b", "c", "d"});
    ASSERT_EQ(vocab->size(), 8u);
    TrainableCCLM m(vocab, 2);
    LabeledCorpus batch;
    batch.records = {{kToxic, {"a", "b"}}, {kNeutral, {"c"}}};
    EXPECT_NEAR(loss_generative(m, batch), std::log(8.0), 1e-12);

    TrainableCCLM sharp(vocab, 2);
    LabeledCorpus one;
    one.records = {{kNeutral, {"a", "b"}}};
    sharp.theta()[sharp.row_offset(kNeutral, Vocabulary::bos) + vocab->id("a")] = 1000;
    sharp.theta()[sharp.row_offset(kNeutral, vocab->id("a")) + vocab->id("b")] = 1000;
    EXPECT_NEAR(loss_generative(sharp, one), 0.0, 1e-12);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (auto& t : m.theta()) t = g(rng);
    const double expected =
        0.5 * (-oracle_loglike(m, kToxic, vocab->encode({"a", "b"})) / 2 - oracle_loglike(m, kNeutral, vocab->encode({"c"})));
    EXPECT_NEAR(loss_generative(m, batch), expected, 1e-12);
}

TEST(TrainableCclm, DiscriminativeLossHandCases) {
    auto vocab = test::vocab_of({"a", "b", "c", "d"});
    LabeledCorpus batch;
    batch.records = {{kNeutral, {"a"}}};
    TrainableCCLM same(vocab, 2);
    EXPECT_NEAR(loss_discriminative(same, batch), std::log(2.0), 1e-12);

    // P(a | BOS, neutral) = 0.45 and P(a | BOS, toxic) = 0.05: a 9:1 likelihood ratio.
    TrainableCCLM m(vocab, 2);
    const int a = vocab->id("a");
    for (int cls : {kNeutral, kToxic}) {
        const double pa = cls == kNeutral ? 0.45 : 0.05;
        for (std::size_t k = 0; k < vocab->size(); ++k)
            m.theta()[m.row_offset(cls, Vocabulary::bos) + k] = static_cast<int>(k) == a ? std::log(pa) : std::log((1 - pa) / 7);
    }
    EXPECT_NEAR(loss_discriminative(m, batch), -std::log(0.9), 1e-12);

    m.theta()[m.row_offset(kNeutral, Vocabulary::bos) + a] = 60;
    m.theta()[m.row_offset(kToxic, Vocabulary::bos) + a] = -60;
    EXPECT_LT(loss_discriminative(m, batch), 1e-12);

    TrainableCCLM single(vocab, 1);
    EXPECT_THROW(loss_discriminative(single, batch), DegenerateInput);
}

TEST(TrainableCclm, CombinedLossIsAffineInLambda) {
    auto vocab = test::vocab_of({"a", "b", "c"});
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    TrainableCCLM m(vocab, 2);
    for (auto& t : m.theta()) t = g(rng);
    const auto batch = random_batch({"a", "b", "c"}, rng, 6);
    const double lg = loss_generative(m, batch), ld = loss_discriminative(m, batch);
    EXPECT_DOUBLE_EQ(loss_combined(m, batch, 0.0), lg);
    EXPECT_DOUBLE_EQ(loss_combined(m, batch, 1.0), ld);
    for (double lambda : {0.1, 0.25, 0.5, 0.9}) EXPECT_NEAR(loss_combined(m, batch, lambda), lambda * ld + (1 - lambda) * lg, 1e-12);
    EXPECT_THROW(loss_combined(m, batch, -0.1), InvalidArgument);
    EXPECT_THROW(loss_combined(m, batch, 1.1), InvalidArgument);
    EXPECT_THROW(loss_combined(m, LabeledCorpus{}, 0.5), InvalidArgument);
}

TEST(TrainableCclm, GradientVanishesOnSymmetricData) {
    auto vocab = test::vocab_of({"a", "b", "c"});
    LabeledCorpus batch;
    for (int cls : {kNeutral, kToxic}) {
        batch.records.push_back({cls, {"a", "b"}});
        batch.records.push_back({cls, {"c"}});
    }
    TrainableCCLM m(vocab, 2);
    for (double g : grad_combined(m, batch, 1.0)) EXPECT_NEAR(g, 0.0, 1e-9);
}

TEST(TrainableCclm, AnalyticGradientMatchesFiniteDifferences) {
    const std::vector<std::string> words{"a", "b", "c"};
    auto vocab = test::vocab_of(words);
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g(0, 0.7);
    std::uniform_real_distribution<double> lam(0, 1);
    const double eps = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        TrainableCCLM m(vocab, 2);
        for (auto& t : m.theta()) t = g(rng);
        const auto batch = random_batch(words, rng, 2 + static_cast<std::size_t>(trial % 4));
        const double lambda = trial == 0 ? 0.0 : trial == 1 ? 1.0 : lam(rng);
        const double rel = gradient_relative_error(m, batch, lambda, eps);
        EXPECT_LE(rel, 1e-4) << "trial " << trial << " lambda " << lambda;
    }
}

TEST(TrainableCclm, FullBatchDescentIsMonotone) {
    const std::vector<std::string> words{"a", "b", "c", "d"};
    auto vocab = test::vocab_of(words);
    std::mt19937_64 rng(5);
    const auto batch = random_batch(words, rng, 12);
    for (double lambda : {0.0, 0.5, 1.0}) {
        const auto result = train_cclm(batch, vocab, lambda, 0.05, 50);
        ASSERT_EQ(result.loss_history.size(), 51u);
        for (std::size_t i = 1; i < result.loss_history.size(); ++i)
            EXPECT_LT(result.loss_history[i], result.loss_history[i - 1]) << "lambda " << lambda << " step " << i;
    }
    EXPECT_THROW(train_cclm(batch, vocab, 0.5, 0.0, 1), InvalidArgument);
}

TEST(TrainableCclm, NextLogprobsAreNormalized) {
    auto vocab = test::vocab_of({"a", "b"});
    TrainableCCLM m(vocab, 2);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0, 3);
    for (auto& t : m.theta()) t = g(rng);
    for (int cls : {0, 1})
        for (int prev = 0; prev < static_cast<int>(vocab->size()); ++prev) EXPECT_TRUE(m.next_logprobs(cls, {prev}).is_normalized(1e-9));
    EXPECT_THROW(m.next_logprobs(2, {}), InvalidArgument);
}

// ---------- remote adapter ----------

namespace {

class FakeProvider {
public:
    explicit FakeProvider(std::size_t vocab_size) : vocab_size_(vocab_size) {
        server_.Post("/logprobs", [this](const httplib::Request& req, httplib::Response& res) {
            last_request = nlohmann::json::parse(req.body);
            const double lp = std::log(1.0 / static_cast<double>(vocab_size_));
            nlohmann::json out;
            if (mode == "valid") out = {{"logprobs", std::vector<double>(vocab_size_, lp)}};
            else if (mode == "short_mass") out = {{"logprobs", std::vector<double>(vocab_size_, std::log(0.9 / static_cast<double>(vocab_size_)))}};
            else if (mode == "missing") out = {{"scores", std::vector<double>(vocab_size_, lp)}};
            else if (mode == "wrong_size") out = {{"logprobs", std::vector<double>(vocab_size_ + 1, lp)}};
            else if (mode == "positive") out = {{"logprobs", std::vector<double>(vocab_size_, 0.5)}};
            if (mode == "status500") {
                res.status = 500;
                return;
            }
            res.set_content(mode == "garbage" ? std::string("{not json") : out.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeProvider() {
        server_.stop();
        thread_.join();
    }

    RemoteEndpoint endpoint(std::vector<std::string>* warnings = nullptr) const {
        RemoteEndpoint e;
        e.port = port_;
        e.timeout_seconds = 5;
        e.warn = [warnings](const std::string& w) {
            if (warnings) warnings->push_back(w);
        };
        return e;
    }

    std::string mode = "valid";
    nlohmann::json last_request;

private:
    std::size_t vocab_size_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

} // namespace

TEST(Remote, ValidPayloadBecomesDistribution) {
    FakeProvider fake(6);
    const auto r = remote_logprobs(fake.endpoint(), {{0, 4}, TokenIds{5}, std::string("toxic")}, 6);
    EXPECT_FALSE(r.renormalized);
    EXPECT_TRUE(r.dist.is_normalized(1e-4));
    EXPECT_EQ(fake.last_request.at("prefix"), nlohmann::json({0, 4}));
    EXPECT_EQ(fake.last_request.at("source"), nlohmann::json({5}));
    EXPECT_EQ(fake.last_request.at("class"), "toxic");
}

TEST(Remote, ShortMassIsRenormalizedWithWarning) {
    FakeProvider fake(6);
    fake.mode = "short_mass";
    std::vector<std::string> warnings;
    const auto r = remote_logprobs(fake.endpoint(&warnings), {{}, std::nullopt, std::nullopt}, 6);
    EXPECT_TRUE(r.renormalized);
    EXPECT_TRUE(r.dist.is_normalized(1e-9));
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("renormalized"), std::string::npos);
}

TEST(Remote, SchemaViolationsAndTransportFailuresRaise) {
    FakeProvider fake(6);
    for (const char* mode : {"missing", "wrong_size", "positive", "garbage", "status500"}) {
        fake.mode = mode;
        EXPECT_THROW(remote_logprobs(fake.endpoint(), {{}, std::nullopt, std::nullopt}, 6), RemoteError) << mode;
    }
    RemoteEndpoint closed;
    closed.port = 1;
    closed.timeout_seconds = 1;
    EXPECT_THROW(remote_logprobs(closed, {{}, std::nullopt, std::nullopt}, 6), RemoteError);
}

TEST(Remote, ParseToleratesSmallDrift) {
    std::vector<double> lp(4, std::log(0.25 * (1 + 5e-5)));
    const auto r = parse_remote_response(nlohmann::json{{"logprobs", lp}}.dump(), 4);
    EXPECT_FALSE(r.renormalized);
    EXPECT_THROW(parse_remote_response(R"({"logprobs": [-1, "x", -1, -1]})", 4), RemoteError);
}

TEST(Remote, AdaptersSendTheirContext) {
    auto vocab = test::vocab_of({"a", "b"});
    FakeProvider fake(vocab->size());
    RemoteParaphraser para(vocab, fake.endpoint());
    EXPECT_TRUE(para.next_logprobs({4, 5}, {4}).is_normalized(1e-9));
    EXPECT_EQ(fake.last_request.at("source"), nlohmann::json({4, 5}));
    EXPECT_FALSE(fake.last_request.contains("class"));

    RemoteClassConditional cc(vocab, default_classes(), fake.endpoint());
    EXPECT_EQ(cc.num_classes(), 2u);
    cc.next_logprobs(kToxic, {4});
    EXPECT_EQ(fake.last_request.at("class"), "toxic");
    EXPECT_FALSE(fake.last_request.contains("source"));
    EXPECT_THROW(cc.next_logprobs(7, {}), InvalidArgument);
}
