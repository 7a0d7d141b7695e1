#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctq/bm25.hpp"
#include "ctq/corpus.hpp"
#include "ctq/features.hpp"
#include "ctq/regressor.hpp"

namespace ctq {

enum class MethodKind { ctq, bm25, rbm25, random, feature, scavg };

/// A selection strategy as named on the command line:
/// `ctq`, `bm25`, `rbm25`, `random`, `feat:<name>` or `scavg:<f1,f2,...>`.
struct Method {
    MethodKind kind = MethodKind::bm25;
    std::vector<Feature> features;

    std::string tag() const;
    static Method parse(std::string_view text);

    bool needs_model() const { return kind == MethodKind::ctq; }
    bool needs_store() const
    {
        return kind == MethodKind::ctq || kind == MethodKind::feature || kind == MethodKind::scavg;
    }
};

struct Chosen {
    std::size_t pair_id = 0;
    double score = 0.0;
    /// Added by random fill because the shortlist was too short.
    bool fill = false;
};

struct SelectionResult {
    std::string method;
    std::size_t input_id = 0;
    /// Best first.
    std::vector<Chosen> chosen;
    /// Every reranked candidate with the score the method assigned.
    std::vector<ScoredCandidate> diagnostics;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

/// Feature vectors for every shortlisted candidate, in shortlist order.
std::vector<FeatureVector> candidate_features(const CandidateList& cands, std::string_view input,
                                              const ExampleDatabase& db, const ScoreStore& store,
                                              MissingPolicy policy = MissingPolicy::strict,
                                              const std::array<double, kFeatureCount>* defaults = nullptr);

SelectionResult bm25_select(const CandidateList& cands, std::size_t k);

/// Ranks by the model's predicted CTQ, descending; ties by ascending pair id.
SelectionResult ctq_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                           const CtqModel& model, const ScoreStore& store, std::size_t k,
                           MissingPolicy policy = MissingPolicy::strict);

/// Ranks by one rankable feature: descending, or ascending for perplexity.
SelectionResult single_feature_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                                      Feature feature, const ScoreStore& store, std::size_t k,
                                      MissingPolicy policy = MissingPolicy::strict,
                                      const std::array<double, kFeatureCount>* defaults = nullptr);

/// Average of per-candidate-set min-max normalized features (perplexity
/// negated first). Falls back to BM25 order when every candidate has the
/// same value on every feature.
SelectionResult score_avg_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                                 const std::vector<Feature>& features, const ScoreStore& store, std::size_t k,
                                 MissingPolicy policy = MissingPolicy::strict,
                                 const std::array<double, kFeatureCount>* defaults = nullptr);

/// Greedy word n-gram coverage (n = 1..4, weight n) over the query. Each pick
/// maximizes the weight of still-uncovered query n-grams it contains, ties by
/// BM25 rank. When nothing new can be covered the rest is filled in BM25
/// order, preferring sources not already chosen.
SelectionResult rbm25_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                             std::size_t k);

/// k distinct pairs drawn uniformly from the whole database.
SelectionResult random_select(const ExampleDatabase& db, std::size_t k, std::uint64_t seed, std::size_t input_id = 0);

/// Tops `result` up to k with uniformly drawn pairs not already chosen,
/// tagged as fill.
void fill_random(SelectionResult& result, const ExampleDatabase& db, std::size_t k, std::uint64_t seed);

enum class ExampleOrder { best_last, best_first };

std::optional<ExampleOrder> example_order_from_name(std::string_view name);

/// Turns a best-first list into prompt order. With best_last the best example
/// sits right before the query, so index 0 of the returned list (farthest from
/// the query) is the lowest-ranked chosen example.
std::vector<SentencePair> arrange_for_prompt(const std::vector<SentencePair>& best_first, ExampleOrder order);

}  // namespace ctq
