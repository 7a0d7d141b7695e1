#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ctq/chrf.hpp"
#include "ctq/desk_store.hpp"
#include "ctq/selection.hpp"
#include "ctq/text.hpp"
#include "support.hpp"

using namespace ctq;

namespace {

ExampleDatabase make_db(const std::vector<std::pair<std::string, std::string>>& pairs)
{
    ExampleDatabase db;
    for (const auto& [s, t] : pairs)
        db.pairs.push_back({db.pairs.size(), s, t});
    return db;
}

CandidateList all_of(const ExampleDatabase& db, std::size_t input_id = 0)
{
    CandidateList c;
    c.input_id = input_id;
    for (std::size_t i = 0; i < db.size(); ++i)
        c.entries.push_back({i, static_cast<double>(db.size() - i)});
    return c;
}

ScoreStore lexical_store(const ExampleDatabase& db, const std::vector<std::string>& inputs)
{
    ScoreStore store;
    std::vector<std::size_t> ids(db.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = i;
    populate_lexical_store(store, db, inputs, std::vector<std::vector<std::size_t>>(inputs.size(), ids));
    return store;
}

std::vector<std::size_t> ids_of(const SelectionResult& r)
{
    std::vector<std::size_t> out;
    for (const auto& c : r.chosen)
        out.push_back(c.pair_id);
    return out;
}

// Plain greedy coverage written independently of the library: weights are
// recounted from scratch for every candidate at every step.
std::vector<std::size_t> greedy_oracle(const CandidateList& cands, const ExampleDatabase& db, const std::string& input,
                                       std::size_t k)
{
    auto grams = [](const std::vector<std::string>& t) {
        std::vector<std::vector<std::string>> out;
        for (std::size_t n = 1; n <= 4; ++n)
            for (std::size_t i = 0; i + n <= t.size(); ++i)
                out.emplace_back(t.begin() + static_cast<long>(i), t.begin() + static_cast<long>(i + n));
        return out;
    };
    auto query = grams(tokenize_for_retrieval(input));
    std::vector<bool> covered(query.size(), false);
    std::vector<std::vector<std::vector<std::string>>> cg;
    for (const auto& e : cands.entries)
        cg.push_back(grams(tokenize_for_retrieval(db[e.pair_id].source)));
    auto has = [](const std::vector<std::vector<std::string>>& set, const std::vector<std::string>& g) {
        return std::find(set.begin(), set.end(), g) != set.end();
    };
    std::vector<std::size_t> picked;
    std::vector<bool> used(cands.size(), false);
    while (picked.size() < k) {
        double best = 0.0;
        std::size_t arg = cands.size();
        for (std::size_t c = 0; c < cands.size(); ++c) {
            if (used[c])
                continue;
            double w = 0.0;
            for (std::size_t q = 0; q < query.size(); ++q)
                if (!covered[q] && has(cg[c], query[q]))
                    w += static_cast<double>(query[q].size());
            if (w > best) {
                best = w;
                arg = c;
            }
        }
        if (arg == cands.size())
            break;
        used[arg] = true;
        picked.push_back(cands.entries[arg].pair_id);
        for (std::size_t q = 0; q < query.size(); ++q)
            if (has(cg[arg], query[q]))
                covered[q] = true;
    }
    for (int pass = 0; pass < 2; ++pass)
        for (std::size_t c = 0; c < cands.size() && picked.size() < k; ++c) {
            if (used[c])
                continue;
            bool dup = false;
            for (auto p : picked)
                dup = dup || db[p].source == db[cands.entries[c].pair_id].source;
            if (pass == 0 && dup)
                continue;
            used[c] = true;
            picked.push_back(cands.entries[c].pair_id);
        }
    return picked;
}

CtqModel pass_through_model(Feature f)
{
    MlpConfig cfg;
    cfg.hidden_layers = 1;
    cfg.hidden_width = 1;
    cfg.activation = Activation::relu;
    DenseLayer<double> l0, l1;
    l0.weight = Eigen::MatrixXd::Zero(1, 12);
    l0.weight(0, static_cast<Eigen::Index>(f)) = 1.0;
    l0.bias = Eigen::VectorXd::Zero(1);
    l1.weight = Eigen::MatrixXd::Ones(1, 1);
    l1.bias = Eigen::VectorXd::Zero(1);
    CtqModel m;
    m.net = Mlp<double>(cfg, {l0, l1});
    m.normalization.mean.fill(0.0);
    m.normalization.std.fill(1.0);
    return m;
}

const std::vector<std::pair<std::string, std::string>> kFixture{
    {"the cat sat on the mat", "le chat"},       {"a dog ran in the park", "un chien"},
    {"the cat ate the fish", "le chat mange"},   {"cats and dogs", "chats et chiens"},
    {"on the mat lay a cat", "sur le tapis"},    {"nothing in common here", "rien"},
    {"the mat was red", "le tapis rouge"},       {"sat on a chair", "assis"},
    {"the the the", "le le le"},                 {"cat sat mat", "chat assis tapis"},
};

}  // namespace

TEST(Method, ParseAndTag)
{
    for (const std::string t : {"ctq", "bm25", "rbm25", "random", "feat:chrf_in_src", "scavg:labse_in_src,ppl_src_tgt"})
        EXPECT_EQ(Method::parse(t).tag(), t);
    EXPECT_THROW(Method::parse("feat:num_tok_in"), std::invalid_argument);
    EXPECT_THROW(Method::parse("feat:bogus"), std::invalid_argument);
    EXPECT_THROW(Method::parse("scavg:"), std::invalid_argument);
    EXPECT_THROW(Method::parse("mmr"), std::invalid_argument);
    EXPECT_TRUE(Method::parse("ctq").needs_model());
    EXPECT_FALSE(Method::parse("rbm25").needs_store());
}

TEST(Bm25Select, KeepsShortlistOrder)
{
    CandidateList c;
    c.entries = {{5, 3.0}, {2, 3.0}, {9, 1.0}};
    EXPECT_EQ(ids_of(bm25_select(c, 2)), (std::vector<std::size_t>{2, 5}));
    EXPECT_EQ(bm25_select(c, 10).chosen.size(), 3u);
}

TEST(CtqRerank, SingleCandidateAndPassThroughModel)
{
    const auto db = make_db(kFixture);
    const std::string input = "the cat sat on the mat today";
    const auto store = lexical_store(db, {input});
    const auto model = pass_through_model(Feature::chrf_in_src);

    CandidateList one;
    one.entries = {{3, 1.0}};
    EXPECT_EQ(ids_of(ctq_rerank(one, input, db, model, store, 4)), (std::vector<std::size_t>{3}));

    const auto cands = all_of(db);
    const auto by_model = ctq_rerank(cands, input, db, model, store, 10);
    const auto by_feature = single_feature_rerank(cands, input, db, Feature::chrf_in_src, store, 10);
    EXPECT_EQ(ids_of(by_model), ids_of(by_feature));
    for (std::size_t i = 0; i < 10; ++i)
        EXPECT_NEAR(by_model.chosen[i].score, chrf(input, db[by_model.chosen[i].pair_id].source), 1e-12);
}

TEST(CtqRerank, InvariantUnderPositiveAffineMaps)
{
    const auto db = make_db(kFixture);
    const std::string input = "a cat in the park";
    const auto store = lexical_store(db, {input});
    Rng rng(4);
    MlpConfig cfg;
    cfg.hidden_layers = 2;
    cfg.hidden_width = 8;
    cfg.activation = Activation::tanh;
    CtqModel model;
    model.net = Mlp<double>(cfg, rng);
    model.normalization.mean.fill(0.5);
    model.normalization.std.fill(2.0);
    auto scaled = model;
    auto& out = scaled.net.layers().back();
    out.weight *= 3.5;
    out.bias = out.bias * 3.5 + Eigen::VectorXd::Constant(1, -7.0);
    const auto a = ctq_rerank(all_of(db), input, db, model, store, 10);
    const auto b = ctq_rerank(all_of(db), input, db, scaled, store, 10);
    EXPECT_EQ(ids_of(a), ids_of(b));
}

TEST(CtqRerank, StrictMissReported)
{
    const auto db = make_db(kFixture);
    ScoreStore empty;
    EXPECT_THROW(ctq_rerank(all_of(db), "x", db, pass_through_model(Feature::labse_in_src), empty, 4),
                 MissingScoresError);
}

TEST(SingleFeature, PerplexityAscending)
{
    const auto db = make_db({{"a", "x"}, {"b", "y"}, {"c", "z"}});
    auto store = lexical_store(db, {"q"});
    const double ppl[] = {10.0, 5.0, 20.0};
    for (std::size_t i = 0; i < 3; ++i)
        store.put_perplexity(ppl_text_example(db[i]), ppl[i]);
    const auto r = single_feature_rerank(all_of(db), "q", db, Feature::ppl_src_tgt, store, 3);
    EXPECT_EQ(ids_of(r), (std::vector<std::size_t>{1, 0, 2}));
    EXPECT_EQ(r.chosen[0].score, 5.0);
    EXPECT_THROW(single_feature_rerank(all_of(db), "q", db, Feature::num_tok_src, store, 3), std::invalid_argument);
}

TEST(SingleFeature, IdenticalCandidateFirstAndManualSort)
{
    const auto db = make_db(kFixture);
    const std::string input = "cats and dogs";
    const auto store = lexical_store(db, {input});
    const auto r = single_feature_rerank(all_of(db), input, db, Feature::chrf_in_src, store, 1);
    EXPECT_EQ(ids_of(r), (std::vector<std::size_t>{3}));

    // labse_in_tgt by hand: cosine of the stored unit vectors.
    std::vector<std::pair<double, std::size_t>> manual;
    const auto qe = *store.embedding(input);
    for (std::size_t i = 0; i < db.size(); ++i) {
        const auto te = *store.embedding(db[i].target);
        double dot = 0.0;
        for (std::size_t d = 0; d < qe.size(); ++d)
            dot += static_cast<double>(qe[d]) * static_cast<double>(te[d]);
        manual.push_back({-dot, i});
    }
    std::sort(manual.begin(), manual.end(), [](const auto& a, const auto& b) {
        return std::abs(a.first - b.first) > 1e-6 ? a.first < b.first : a.second < b.second;
    });
    const auto all = single_feature_rerank(all_of(db), input, db, Feature::labse_in_tgt, store, 10);
    for (std::size_t i = 0; i < 10; ++i)
        EXPECT_EQ(all.chosen[i].pair_id, manual[i].second);

    const auto order = ids_of(all);
    const std::set<std::size_t> perm(order.begin(), order.end());
    EXPECT_EQ(perm.size(), 10u);
}

TEST(ScoreAvg, SingleFeatureMatchesSingleRerank)
{
    const auto db = make_db(kFixture);
    const std::string input = "the red mat";
    const auto store = lexical_store(db, {input});
    for (auto f : {Feature::labse_in_src, Feature::chrf_in_src, Feature::ppl_src_tgt_in}) {
        const auto a = score_avg_rerank(all_of(db), input, db, {f}, store, 10);
        const auto b = single_feature_rerank(all_of(db), input, db, f, store, 10);
        EXPECT_EQ(ids_of(a), ids_of(b)) << feature_name(f);
    }
}

TEST(ScoreAvg, OppositeFeaturesTieBrokenById)
{
    const auto db = make_db({{"p", "x"}, {"q", "y"}});
    auto store = lexical_store(db, {"in"});
    // cmt_src_tgt: 0.2 vs 0.8; ppl_src_tgt: 1 vs 4 (inverted: lower better).
    store.put_pair_score("p", "x", 0.8);
    store.put_pair_score("q", "y", 0.2);
    store.put_perplexity(ppl_text_example(db[0]), 4.0);
    store.put_perplexity(ppl_text_example(db[1]), 1.0);
    CandidateList c;
    c.entries = {{1, 2.0}, {0, 1.0}};
    const auto r = score_avg_rerank(c, "in", db, {Feature::cmt_src_tgt, Feature::ppl_src_tgt}, store, 2);
    EXPECT_EQ(ids_of(r), (std::vector<std::size_t>{0, 1}));
    EXPECT_DOUBLE_EQ(r.chosen[0].score, 0.5);
    EXPECT_DOUBLE_EQ(r.chosen[1].score, 0.5);
}

TEST(ScoreAvg, HandComputedAverages)
{
    const auto db = make_db(kFixture);
    const std::string input = "the cat on the mat";
    const auto store = lexical_store(db, {input});
    const std::vector<Feature> fs{Feature::labse_in_src, Feature::labse_in_tgt, Feature::labse_src_tgt};
    std::vector<std::array<double, 3>> v;
    for (std::size_t i = 0; i < db.size(); ++i) {
        const auto fv = extract_features(db[i], input, store);
        v.push_back({fv[fs[0]], fv[fs[1]], fv[fs[2]]});
    }
    std::vector<double> avg(db.size(), 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        double lo = 1e9, hi = -1e9;
        for (const auto& row : v) {
            lo = std::min(lo, row[j]);
            hi = std::max(hi, row[j]);
        }
        for (std::size_t i = 0; i < v.size(); ++i)
            avg[i] += (v[i][j] - lo) / (hi - lo) / 3.0;
    }
    const auto r = score_avg_rerank(all_of(db), input, db, fs, store, 10);
    for (const auto& c : r.chosen)
        EXPECT_NEAR(c.score, avg[c.pair_id], 1e-12);
    for (std::size_t i = 1; i < r.chosen.size(); ++i)
        EXPECT_GE(r.chosen[i - 1].score, r.chosen[i].score);
}

TEST(ScoreAvg, ConstantFeaturesFallBackToBm25)
{
    const auto db = make_db({{"same", "t"}, {"same", "t"}, {"same", "t"}});
    const auto store = lexical_store(db, {"q"});
    CandidateList c;
    c.entries = {{2, 3.0}, {0, 2.0}, {1, 1.0}};
    const auto r = score_avg_rerank(c, "q", db, {Feature::labse_in_src, Feature::cmt_in_src}, store, 3);
    EXPECT_EQ(ids_of(r), (std::vector<std::size_t>{2, 0, 1}));
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_TRUE(r.to_json().contains("warnings"));
}

TEST(Rbm25, DiversityExample)
{
    const auto db = make_db({{"a b", "x"}, {"a b", "y"}, {"c", "z"}});
    const auto r = rbm25_rerank(all_of(db), "a b", db, 2);
    EXPECT_EQ(ids_of(r), (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(r.chosen[0].score, 4.0);
}

TEST(Rbm25, IdenticalCandidatesKeepBm25Order)
{
    const auto db = make_db({{"x y", "1"}, {"x y", "2"}, {"x y", "3"}, {"x y", "4"}});
    CandidateList c;
    c.entries = {{2, 4.0}, {0, 3.0}, {3, 2.0}, {1, 1.0}};
    EXPECT_EQ(ids_of(rbm25_rerank(c, "x y z", db, 3)), (std::vector<std::size_t>{2, 0, 3}));
}

TEST(Rbm25, MatchesIndependentGreedy)
{
    const auto db = make_db(kFixture);
    for (const std::string input : {"the cat sat on the mat", "a dog and a cat", "the the mat", "zzz"}) {
        for (std::size_t k : {1, 3, 4, 10}) {
            const auto c = all_of(db);
            EXPECT_EQ(ids_of(rbm25_rerank(c, input, db, k)), greedy_oracle(c, db, input, k)) << input << " k=" << k;
        }
    }
    Rng rng(8);
    const auto vocab = test::make_vocab(8);
    for (int trial = 0; trial < 100; ++trial) {
        ExampleDatabase small;
        for (std::size_t i = 0; i < 10; ++i)
            small.pairs.push_back({i, test::random_sentence(rng, vocab, 1, 6), "t"});
        const auto q = test::random_sentence(rng, vocab, 2, 8);
        CandidateList c;
        for (std::size_t i = 0; i < 10; ++i)
            c.entries.push_back({(i * 7) % 10, 10.0 - static_cast<double>(i)});
        ASSERT_EQ(ids_of(rbm25_rerank(c, q, small, 4)), greedy_oracle(c, small, q, 4)) << q;
    }
}

TEST(Random, DeterministicDistinctAndUniform)
{
    const auto db = make_db(kFixture);
    EXPECT_EQ(ids_of(random_select(db, 4, 77)), ids_of(random_select(db, 4, 77)));
    const auto whole = ids_of(random_select(db, 10, 3));
    EXPECT_EQ(std::set<std::size_t>(whole.begin(), whole.end()).size(), 10u);
    EXPECT_THROW(random_select(db, 11, 0), std::invalid_argument);

    std::array<double, 10> counts{};
    const int draws = 100000;
    for (int s = 0; s < draws; ++s)
        counts[random_select(db, 1, static_cast<std::uint64_t>(s)).chosen[0].pair_id] += 1;
    const double expect = draws / 10.0;
    const double sigma = std::sqrt(draws * 0.1 * 0.9);
    double chi2 = 0.0;
    for (double c : counts) {
        EXPECT_LT(std::abs(c - expect), 3 * sigma);
        chi2 += (c - expect) * (c - expect) / expect;
    }
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    EXPECT_LT(chi2, 27.88);
}

TEST(Fill, TopsUpWithDistinctRandomPairs)
{
    const auto db = make_db(kFixture);
    CandidateList c;
    c.entries = {{4, 2.0}, {7, 1.0}};
    auto r = bm25_select(c, 4);
    fill_random(r, db, 4, 5);
    ASSERT_EQ(r.chosen.size(), 4u);
    EXPECT_FALSE(r.chosen[0].fill);
    EXPECT_FALSE(r.chosen[1].fill);
    EXPECT_TRUE(r.chosen[2].fill);
    EXPECT_TRUE(r.chosen[3].fill);
    const auto ids = ids_of(r);
    EXPECT_EQ(std::set<std::size_t>(ids.begin(), ids.end()).size(), 4u);

    auto tiny = bm25_select(c, 4);
    fill_random(tiny, make_db({{"a", "b"}, {"c", "d"}, {"e", "f"}, {"g", "h"}, {"i", "j"}}), 20, 1);
    EXPECT_EQ(tiny.chosen.size(), 5u);
}

TEST(Order, BestLastPutsIndexZeroNextToQuery)
{
    const std::vector<SentencePair> best_first{{0, "best", "B"}, {1, "mid", "M"}, {2, "worst", "W"}};
    const auto last = arrange_for_prompt(best_first, ExampleOrder::best_last);
    EXPECT_EQ(last.back().source, "best");
    EXPECT_EQ(last.front().source, "worst");
    EXPECT_EQ(arrange_for_prompt(best_first, ExampleOrder::best_first), best_first);
    EXPECT_EQ(example_order_from_name("best-last"), ExampleOrder::best_last);
    EXPECT_FALSE(example_order_from_name("middle"));
}

TEST(SelectionJson, Shape)
{
    CandidateList c;
    c.input_id = 12;
    c.entries = {{4, 2.5}};
    const auto j = bm25_select(c, 4).to_json();
    EXPECT_EQ(j["method"], "bm25");
    EXPECT_EQ(j["input_id"], 12);
    EXPECT_EQ(j["chosen"][0]["id"], 4);
    EXPECT_EQ(j["chosen"][0]["fill"], false);
    EXPECT_EQ(j["candidates"].size(), 1u);
}
