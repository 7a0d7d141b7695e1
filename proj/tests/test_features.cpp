#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "ctq/chrf.hpp"
#include "ctq/desk_store.hpp"
#include "ctq/features.hpp"
#include "support.hpp"

using namespace ctq;

TEST(Features, SchemaOrderAndNames)
{
    const std::vector<std::string> want{"labse_in_src", "labse_in_tgt", "chrf_in_src", "cmt_in_src",
                                        "cmt_in_tgt",   "labse_src_tgt", "cmt_src_tgt", "num_tok_in",
                                        "num_tok_src",  "num_tok_tgt",  "ppl_src_tgt", "ppl_src_tgt_in"};
    ASSERT_EQ(all_features().size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(feature_name(all_features()[i]), want[i]);
        EXPECT_EQ(feature_from_name(want[i]), all_features()[i]);
    }
    EXPECT_FALSE(feature_from_name("bogus"));
    int rankable = 0;
    for (auto f : all_features())
        rankable += is_rankable(f);
    EXPECT_EQ(rankable, 9);
    EXPECT_TRUE(lower_is_better(Feature::ppl_src_tgt_in));
    EXPECT_FALSE(lower_is_better(Feature::cmt_src_tgt));
}

TEST(Features, CosineHandValues)
{
    Eigen::Vector3d a(1, 0, 0), b(0, 1, 0);
    EXPECT_EQ(cosine(a, a), 1.0);
    EXPECT_EQ(cosine(a, b), 0.0);
    EXPECT_EQ(cosine(a, Eigen::Vector3d(-2, 0, 0)), -1.0);
    // (1,2,0).(2,1,2) = 4; |(1,2,0)| = sqrt 5; |(2,1,2)| = 3
    EXPECT_NEAR(cosine(Eigen::Vector3d(1, 2, 0), Eigen::Vector3d(2, 1, 2)), 4.0 / (3.0 * std::sqrt(5.0)), 1e-15);
    const std::vector<double> x{1, 2, 0}, y{2, 1, 2};
    EXPECT_NEAR(cosine(x, y), 4.0 / (3.0 * std::sqrt(5.0)), 1e-15);
    EXPECT_THROW(cosine(a, Eigen::Vector3d::Zero()), std::invalid_argument);
    EXPECT_THROW(cosine(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(3)), std::invalid_argument);
}

TEST(Features, EmbeddingHexRoundTrip)
{
    const std::vector<float> v{0.6f, -0.8f, 0.0f, 1e-20f};
    EXPECT_EQ(decode_embedding(encode_embedding(v)), v);
    EXPECT_EQ(encode_embedding(std::vector<float>{1.0f}), "0000803f");
    EXPECT_THROW(decode_embedding("abc"), std::invalid_argument);
    EXPECT_THROW(decode_embedding("zzzzzzzz"), std::invalid_argument);
}

TEST(ScoreStoreFormat, GoldenFileLoads)
{
    const auto store = ScoreStore::load(test::fixture("store_golden.txt"));
    EXPECT_EQ(store.size(), 4u);
    const auto e = store.embedding("hello");
    ASSERT_TRUE(e);
    EXPECT_FLOAT_EQ((*e)[0], 0.6f);
    EXPECT_EQ(store.pair_score("hello", "world"), 0.25);
    EXPECT_FALSE(store.pair_score("world", "hello"));
    EXPECT_EQ(store.perplexity("hello\nworld"), 12.5);
    EXPECT_EQ(store.serialize(), read_file(test::fixture("store_golden.txt")));
}

TEST(ScoreStoreFormat, RoundTripAndUnitNorm)
{
    ScoreStore store;
    store.put_embedding("a", std::vector<float>{3.0f, 4.0f});
    store.put_pair_score("a", "b", 0.125);
    store.put_perplexity("a\nb", 7.0);
    const auto back = ScoreStore::deserialize(store.serialize());
    EXPECT_EQ(back.serialize(), store.serialize());
    const auto e = back.embedding("a");
    ASSERT_TRUE(e);
    double sq = 0;
    for (float f : *e)
        sq += double(f) * f;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
    EXPECT_THROW(store.put_embedding("z", std::vector<float>{0.0f, 0.0f}), std::invalid_argument);
    EXPECT_THROW(store.put_perplexity("z", 0.0), std::invalid_argument);
}

TEST(ScoreStoreFormat, RejectsBadFiles)
{
    EXPECT_THROW(ScoreStore::deserialize("emb\tx\t0000803f\n"), std::runtime_error);
    EXPECT_THROW(ScoreStore::deserialize("#ctq-store v1\nemb\tk:labse\t0000003f\n"), std::runtime_error);
    EXPECT_THROW(ScoreStore::deserialize("#ctq-store v1\nppl\tk:llm\t-1\n"), std::runtime_error);
    EXPECT_THROW(ScoreStore::deserialize("#ctq-store v1\nfoo\tk\t1\n"), std::runtime_error);
    EXPECT_THROW(ScoreStore::deserialize("#ctq-store v1\npair\tk\n"), std::runtime_error);
}

TEST(ScoreStoreFormat, SameTextStoredOnce)
{
    ScoreStore store;
    store.put_embedding("same", std::vector<float>{1.0f, 0.0f});
    store.put_embedding("same", std::vector<float>{1.0f, 0.0f});
    EXPECT_EQ(store.size(), 1u);
}

TEST(ScoreStoreFormat, ConcurrentReaders)
{
    ScoreStore store;
    for (int i = 0; i < 100; ++i)
        store.put_pair_score(std::to_string(i), "x", i);
    std::vector<std::thread> threads;
    std::atomic<int> hits{0};
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 100; ++i)
                hits += store.pair_score(std::to_string(i), "x").has_value();
        });
    for (auto& t : threads)
        t.join();
    EXPECT_EQ(hits.load(), 400);
}

namespace {

ScoreStore full_store(const SentencePair& cand, const std::string& input)
{
    ScoreStore store;
    store.put_embedding(input, std::vector<float>{1, 2, 0});
    store.put_embedding(cand.source, std::vector<float>{2, 1, 2});
    store.put_embedding(cand.target, std::vector<float>{1, 0, 0});
    store.put_pair_score(input, cand.source, 0.1);
    store.put_pair_score(input, cand.target, 0.2);
    store.put_pair_score(cand.source, cand.target, 0.3);
    store.put_perplexity(ppl_text_example(cand), 4.0);
    store.put_perplexity(ppl_text_example_input(cand, input), 5.0);
    return store;
}

}  // namespace

TEST(Features, ExtractAllTwelve)
{
    const SentencePair cand{0, "der Hund bellt", "the dog barks"};
    const std::string input = "der Hund schläft";
    const auto store = full_store(cand, input);
    const auto fv = extract_features(cand, input, store);
    EXPECT_NEAR(fv[Feature::labse_in_src], 4.0 / (3.0 * std::sqrt(5.0)), 1e-6);
    EXPECT_NEAR(fv[Feature::labse_in_tgt], 1.0 / std::sqrt(5.0), 1e-6);
    EXPECT_NEAR(fv[Feature::labse_src_tgt], 2.0 / 3.0, 1e-6);
    EXPECT_EQ(fv[Feature::chrf_in_src], chrf(input, cand.source));
    EXPECT_EQ(fv[Feature::cmt_in_src], 0.1);
    EXPECT_EQ(fv[Feature::cmt_in_tgt], 0.2);
    EXPECT_EQ(fv[Feature::cmt_src_tgt], 0.3);
    EXPECT_EQ(fv[Feature::num_tok_in], 3.0);
    EXPECT_EQ(fv[Feature::num_tok_src], 3.0);
    EXPECT_EQ(fv[Feature::num_tok_tgt], 3.0);
    EXPECT_EQ(fv[Feature::ppl_src_tgt], 4.0);
    EXPECT_EQ(fv[Feature::ppl_src_tgt_in], 5.0);
    EXPECT_FALSE(fv.imputed);
    EXPECT_NO_THROW(validate_features(fv));
}

TEST(Features, IdenticalCandidateAndInput)
{
    const SentencePair cand{0, "gleich", "same"};
    ScoreStore store;
    populate_lexical_store(store, ExampleDatabase{{cand}, "Source", "Target", ""}, {"gleich"}, {{0}});
    const auto fv = extract_features(cand, "gleich", store);
    EXPECT_NEAR(fv[Feature::labse_in_src], 1.0, 1e-6);
    EXPECT_EQ(fv[Feature::chrf_in_src], 100.0);
}

TEST(Features, StrictModeListsEveryMissingKey)
{
    const SentencePair cand{0, "a b", "c d"};
    ScoreStore store;
    try {
        extract_features(cand, "a", store);
        FAIL();
    } catch (const MissingScoresError& e) {
        EXPECT_EQ(e.missing().size(), 8u);
    }
    ScoreStore partial;
    partial.merge_records(full_store(cand, "a").serialize());
    ScoreStore missing_one;
    for (const auto& line : test::split_lines(partial.serialize()))
        if (line.rfind("ppl\t" + hash_hex(ppl_text_example(cand)), 0) != 0)
            missing_one.merge_records(line + "\n");
    try {
        extract_features(cand, "a", missing_one);
        FAIL();
    } catch (const MissingScoresError& e) {
        ASSERT_EQ(e.missing().size(), 1u);
        EXPECT_NE(e.missing()[0].find("ppl"), std::string::npos);
    }
    EXPECT_NO_THROW(extract_features(cand, "a", partial));
}

TEST(Features, FillDefaultImputes)
{
    const SentencePair cand{0, "a b", "c d"};
    ScoreStore store;
    std::array<double, kFeatureCount> defaults{};
    defaults.fill(0.5);
    defaults[static_cast<std::size_t>(Feature::ppl_src_tgt)] = 9.0;
    const auto fv = extract_features(cand, "a", store, MissingPolicy::fill_default, &defaults);
    EXPECT_TRUE(fv.imputed);
    EXPECT_EQ(fv[Feature::ppl_src_tgt], 9.0);
    EXPECT_EQ(fv[Feature::labse_in_src], 0.5);
    EXPECT_EQ(fv[Feature::num_tok_src], 2.0);
    EXPECT_THROW(extract_features(cand, "a", store, MissingPolicy::fill_default, nullptr), std::invalid_argument);
}

TEST(Features, RequiredKeysCoverWhatExtractionReads)
{
    const SentencePair cand{0, "x y", "z"};
    const auto keys = required_keys(cand, "q", StoreIds{});
    ASSERT_EQ(keys.size(), 8u);
    ScoreStore store;
    populate_lexical_store(store, ExampleDatabase{{cand}, "Source", "Target", ""}, {"q"}, {{0}});
    for (const auto& k : keys)
        EXPECT_TRUE(store.contains(k)) << k.describe();
    EXPECT_NO_THROW(extract_features(cand, "q", store));
}

TEST(Features, ValidateRejectsOutOfRange)
{
    FeatureVector fv;
    fv[Feature::ppl_src_tgt] = 2.0;
    fv[Feature::ppl_src_tgt_in] = 2.0;
    EXPECT_NO_THROW(validate_features(fv));
    fv[Feature::labse_in_src] = 1.5;
    EXPECT_THROW(validate_features(fv), std::domain_error);
    fv[Feature::labse_in_src] = std::nan("");
    EXPECT_THROW(validate_features(fv), std::domain_error);
}

TEST(DeskStore, LexicalStandInsBehave)
{
    const auto e = lexical_embedding("hello world");
    double sq = 0;
    for (float f : e)
        sq += double(f) * f;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
    EXPECT_NEAR(lexical_pair_score("same text", "same text"), 1.0, 1e-6);
    EXPECT_GT(lexical_pair_score("the cat sat", "the cat sits"), lexical_pair_score("the cat sat", "zebra"));
    EXPECT_GT(lexical_perplexity("a b c d"), 1.0);
    EXPECT_LT(lexical_perplexity("a a a a"), lexical_perplexity("a b c d"));
}
