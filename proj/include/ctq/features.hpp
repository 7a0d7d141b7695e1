#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "ctq/corpus.hpp"

namespace ctq {

/// Fixed schema order of the candidate/input feature vector. Serialized
/// vectors and model inputs always use this order.
enum class Feature : std::size_t {
    labse_in_src,
    labse_in_tgt,
    chrf_in_src,
    cmt_in_src,
    cmt_in_tgt,
    labse_src_tgt,
    cmt_src_tgt,
    num_tok_in,
    num_tok_src,
    num_tok_tgt,
    ppl_src_tgt,
    ppl_src_tgt_in,
};

inline constexpr std::size_t kFeatureCount = 12;

std::string_view feature_name(Feature f);
std::optional<Feature> feature_from_name(std::string_view name);
const std::array<Feature, kFeatureCount>& all_features();

/// Lower is better for perplexity features.
constexpr bool lower_is_better(Feature f)
{
    return f == Feature::ppl_src_tgt || f == Feature::ppl_src_tgt_in;
}

/// Token-count features are not used on their own for ranking.
constexpr bool is_rankable(Feature f)
{
    return f != Feature::num_tok_in && f != Feature::num_tok_src && f != Feature::num_tok_tgt;
}

struct FeatureVector {
    std::array<double, kFeatureCount> values{};
    /// Some model-backed entries were filled with training-set means.
    bool imputed = false;

    double& operator[](Feature f) { return values[static_cast<std::size_t>(f)]; }
    double operator[](Feature f) const { return values[static_cast<std::size_t>(f)]; }

    Eigen::Map<const Eigen::Matrix<double, kFeatureCount, 1>> as_eigen() const
    {
        return Eigen::Map<const Eigen::Matrix<double, kFeatureCount, 1>>(values.data());
    }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Cosine similarity clamped to [-1, 1]; throws for zero vectors.
template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b)
{
    if (a.size() != b.size() || a.size() == 0)
        throw std::invalid_argument("cosine: dimension mismatch");
    const double na = a.template cast<double>().norm();
    const double nb = b.template cast<double>().norm();
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine: undefined similarity for a zero vector");
    const double c = a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

double cosine(std::span<const double> a, std::span<const double> b);

/// Provider / metric identifiers used to key the score store.
struct StoreIds {
    std::string embedding = "labse";
    std::string qe = "comet-qe";
    std::string lm = "llm";
};

enum class StoreKind { embedding, pair_score, perplexity };

std::string_view store_kind_tag(StoreKind kind);

/// One store lookup a feature vector depends on. `texts` holds one text for
/// embeddings/perplexity and (A, B) for pair scores.
struct StoreKey {
    StoreKind kind;
    std::vector<std::string> texts;
    std::string id;
    Feature feature;

    std::string hashed() const;
    std::string describe() const;
};

class MissingScoresError : public std::runtime_error {
public:
    explicit MissingScoresError(std::vector<std::string> missing);
    const std::vector<std::string>& missing() const { return missing_; }

private:
    std::vector<std::string> missing_;
};

/// Offline cache of model-backed scores, keyed by content hash.
///
/// File format: `#ctq-store v1` header, then `kind<TAB>key<TAB>payload` lines.
/// kind is `emb`, `pair` or `ppl`. Keys are 16-hex-digit FNV-1a hashes of the
/// UTF-8 text joined with the provider id by `:` (pair keys: `hA:hB:metric`).
/// Embedding payloads are unit-norm float32 vectors written as little-endian
/// hex, 8 digits per component; other payloads are decimal.
class ScoreStore {
public:
    explicit ScoreStore(StoreIds ids = {}) : ids_(std::move(ids)) {}

    ScoreStore(const ScoreStore&) = delete;
    ScoreStore& operator=(const ScoreStore&) = delete;
    ScoreStore(ScoreStore&& other) noexcept;
    ScoreStore& operator=(ScoreStore&& other) noexcept;

    const StoreIds& ids() const { return ids_; }

    /// Normalizes before storing; throws for a zero vector.
    void put_embedding(std::string_view text, std::span<const float> vec);
    void put_pair_score(std::string_view a, std::string_view b, double value);
    void put_perplexity(std::string_view text, double value);

    std::optional<std::vector<float>> embedding(std::string_view text) const;
    std::optional<double> pair_score(std::string_view a, std::string_view b) const;
    std::optional<double> perplexity(std::string_view text) const;

    bool contains(const StoreKey& key) const;

    std::size_t size() const;

    std::string serialize() const;
    static ScoreStore deserialize(const std::string& content, StoreIds ids = {});
    void save(const std::filesystem::path& path) const;
    static ScoreStore load(const std::filesystem::path& path, StoreIds ids = {});

    /// Merges raw records (already hashed) from another file's content.
    void merge_records(const std::string& content);

private:
    void put_record(std::string_view kind, std::string key, std::string_view payload, std::size_t line_no);

    StoreIds ids_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, std::vector<float>> embeddings_;
    std::unordered_map<std::string, double> pair_scores_;
    std::unordered_map<std::string, double> perplexities_;
};

std::string encode_embedding(std::span<const float> vec);
std::vector<float> decode_embedding(std::string_view hex);

enum class MissingPolicy { strict, fill_default };

std::optional<MissingPolicy> missing_policy_from_name(std::string_view name);

/// The text fed to the perplexity model for the example and example+input keys.
std::string ppl_text_example(const SentencePair& candidate);
std::string ppl_text_example_input(const SentencePair& candidate, std::string_view input);

/// Every store entry needed for featset(candidate, input).
std::vector<StoreKey> required_keys(const SentencePair& candidate, std::string_view input, const StoreIds& ids);

/// Builds the 12-feature vector for one candidate and input.
///
/// Lexical and token-count features are computed directly. The rest come
/// from `store`. Under `strict` a missing entry throws MissingScoresError; under
/// `fill_default` the missing feature takes the matching entry of `defaults`
/// (training-set means) and the vector is flagged imputed.
FeatureVector extract_features(const SentencePair& candidate, std::string_view input, const ScoreStore& store,
                               MissingPolicy policy = MissingPolicy::strict,
                               const std::array<double, kFeatureCount>* defaults = nullptr);

/// Throws std::domain_error naming the first field outside its valid range.
void validate_features(const FeatureVector& fv);

}  // namespace ctq
