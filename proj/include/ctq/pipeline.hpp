#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctq/bm25.hpp"
#include "ctq/corpus.hpp"
#include "ctq/eval.hpp"
#include "ctq/features.hpp"
#include "ctq/llm_client.hpp"
#include "ctq/prompt.hpp"
#include "ctq/regressor.hpp"
#include "ctq/selection.hpp"

namespace ctq {

/// Bad or inconsistent configuration. The CLI exits with status 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A pipeline stage failed. The CLI exits with status 3.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage))
    {
    }
    const std::string& stage() const { return stage_; }
    /// Pass to `run --resume-from` to restart here.
    std::string resume_token() const { return "resume:" + stage_; }

private:
    std::string stage_;
};

struct Config {
    std::uint64_t seed = 0;

    // corpus
    std::filesystem::path db_path;
    std::filesystem::path heldout_path;
    std::filesystem::path test_path;
    std::string src_lang = "Source";
    std::string tgt_lang = "Target";

    // index
    Bm25Params bm25;
    std::size_t shortlist_n = 100;

    // features
    /// `lexical` builds a desk-scale store in the run directory; anything else is a store file.
    std::string store = "lexical";
    /// Fill perplexity entries from the endpoint's /score_nll instead of the store source.
    bool ppl_from_llm = false;
    MissingPolicy missing = MissingPolicy::strict;

    // llm
    std::string endpoint = "mock:lexical";
    double timeout_s = 60.0;
    int max_retries = 3;
    std::size_t max_in_flight = 8;
    std::size_t max_new_tokens = 256;

    // prompt
    std::string delimiter = "###";
    std::size_t token_budget = 1000;

    // datagen
    std::size_t datagen_k = 100;
    std::string datagen_metric = "chrf";
    std::filesystem::path datagen_scores;
    int generation_retries = 2;
    double max_tombstone_rate = 0.01;

    // train
    MlpConfig mlp;
    TrainConfig train;
    /// Grid search over this grid instead of a single fit. `full` selects the full reference grid.
    std::string tune_grid;
    std::size_t tune_threads = 1;

    // translate
    std::vector<std::string> methods{"ctq", "bm25", "random"};
    std::size_t k = 4;
    ExampleOrder example_order = ExampleOrder::best_last;
    bool random_fill = true;
    std::vector<std::uint64_t> random_seeds{0, 1, 2};

    // evaluate
    std::string eval_metric = "chrf";
    std::filesystem::path eval_scores_dir;
    std::string baseline = "bm25";

    /// Parses a JSON config. Relative paths resolve against `base`.
    static Config from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
    static Config load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    /// Throws ConfigError for unknown methods, bad ranges, missing files.
    void validate() const;

    PromptSpec prompt_spec() const;
};

/// Builds a generation client from an endpoint string:
/// `mock:echo`, `mock:lexical`, `mock:table:<file>` or an http:// URL.
/// Mocks that need references take them from `references` (source -> target).
std::unique_ptr<GenerationClient> make_client(const std::string& endpoint,
                                              const std::map<std::string, std::string>& references,
                                              double timeout_s = 60.0, int max_retries = 3);

/// Adds perplexity entries for every (candidate, query) pair in the shortlists
/// using the client's score_nll.
void populate_perplexity(ScoreStore& store, GenerationClient& client, const ExampleDatabase& db,
                         const std::vector<std::string>& queries, const std::vector<CandidateList>& shortlists,
                         std::size_t max_in_flight);

struct TranslateOptions {
    Method method;
    std::size_t shortlist_n = 100;
    std::size_t k = 4;
    PromptSpec prompt;
    ExampleOrder order = ExampleOrder::best_last;
    bool random_fill = true;
    std::uint64_t seed = 0;
    std::size_t max_new_tokens = 256;
    std::size_t max_in_flight = 8;
    MissingPolicy missing = MissingPolicy::strict;
};

struct TranslateOutput {
    /// One per input; empty when generation failed.
    std::vector<std::string> translations;
    /// One JSON record per input: chosen ids, scores, fill flags, diagnostics.
    std::vector<nlohmann::json> provenance;
};

/// shortlist -> select -> (random fill) -> budget -> prompt -> generate -> postprocess.
TranslateOutput translate(const std::vector<SentencePair>& inputs, const ExampleDatabase& db, const Bm25Index& index,
                          GenerationClient& llm, const ScoreStore* store, const CtqModel* model,
                          const TranslateOptions& options);

/// Selection only, for one input.
SelectionResult select_examples(const SentencePair& input, const ExampleDatabase& db, const Bm25Index& index,
                                const ScoreStore* store, const CtqModel* model, const TranslateOptions& options);

struct RunReport {
    Report report;
    std::vector<std::string> stages_run;
    std::vector<std::string> stages_skipped;
};

struct RunOptions {
    /// Rerun this stage and everything after it even if checksums match.
    std::string resume_from;
    std::function<void(const std::string&)> log;
    /// Replaces the endpoint client (tests).
    GenerationClient* client = nullptr;
};

inline const std::vector<std::string>& stage_names()
{
    static const std::vector<std::string> names{"corpus", "index", "features", "datagen", "train", "translate",
                                                "evaluate"};
    return names;
}

/// Runs every stage into `run_dir`. A stage whose inputs and outputs match
/// the checksums in `run_dir/manifest.json` is skipped.
RunReport run_all(const Config& config, const std::filesystem::path& run_dir, const RunOptions& options = {});

/// Hex FNV-1a over a file's bytes.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace ctq
