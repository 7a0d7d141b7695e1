#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctq/bm25.hpp"
#include "ctq/corpus.hpp"
#include "ctq/features.hpp"
#include "ctq/llm_client.hpp"
#include "ctq/prompt.hpp"
#include "ctq/regressor.hpp"

namespace ctq {

enum class MetricKind { chrf, external };

std::optional<MetricKind> metric_from_name(std::string_view name);

/// Reference-aware sentence scores computed elsewhere, keyed by
/// `hash(src):hash(hyp):hash(ref)`. File lines are `key<TAB>score`.
class ExternalScores {
public:
    static std::string key(std::string_view src, std::string_view hyp, std::string_view ref);
    static ExternalScores load(const std::filesystem::path& path);

    void put(std::string_view src, std::string_view hyp, std::string_view ref, double score);
    std::optional<double> find(std::string_view src, std::string_view hyp, std::string_view ref) const;

private:
    std::map<std::string, double> scores_;
};

/// Sentence-level translation quality used as the CTQ training target.
class XlateScorer {
public:
    XlateScorer() = default;
    explicit XlateScorer(const ExternalScores* external) : kind_(MetricKind::external), external_(external) {}

    MetricKind kind() const { return kind_; }
    double operator()(std::string_view src, std::string_view hyp, std::string_view ref) const;

private:
    MetricKind kind_ = MetricKind::chrf;
    const ExternalScores* external_ = nullptr;
};

struct DatagenConfig {
    std::size_t shortlist_k = 100;
    PromptSpec prompt;
    std::size_t max_new_tokens = 256;
    std::size_t max_in_flight = 8;
    /// Extra attempts for a failed generation before it becomes a tombstone.
    int generation_retries = 2;
    MissingPolicy policy = MissingPolicy::strict;
    std::optional<std::array<double, kFeatureCount>> defaults;
    double max_tombstone_rate = 0.01;
};

struct Tombstone {
    std::size_t query_id = 0;
    std::size_t candidate_id = 0;
    std::string reason;
};

struct DatagenOutput {
    std::vector<TrainingInstance> rows;
    std::vector<Tombstone> tombstones;
};

class DatagenError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Builds CTQ training rows: for every held-out pair, shortlist K candidates,
/// translate the held-out source with each candidate as the single prompt
/// example, score the translation against the reference and pair the score
/// with the candidate's features. Rows come out in held-out order, then
/// shortlist rank.
///
/// With `output` set, rows are appended to that file as they complete and
/// rows already present are skipped, so an interrupted run can be resumed.
DatagenOutput generate_training_data(const HeldOutSet& heldout, const ExampleDatabase& db, const Bm25Index& index,
                                     GenerationClient& llm, const ScoreStore& store, const XlateScorer& metric,
                                     const DatagenConfig& config,
                                     const std::optional<std::filesystem::path>& output = std::nullopt);

// Training-data file: `#ctq-train v1` header line naming the columns
// (query_id, candidate_id, the 12 features in schema order, ctq), then one
// tab-separated decimal row per instance. Failed rows are kept as
// `!skip<TAB>query_id<TAB>candidate_id<TAB>reason` lines.
std::string training_header();
std::string format_training_row(const TrainingInstance& row);
DatagenOutput parse_training_data(const std::string& content);
DatagenOutput load_training_data(const std::filesystem::path& path);
void save_training_data(const DatagenOutput& data, const std::filesystem::path& path);

}  // namespace ctq
