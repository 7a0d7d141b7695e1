#include "ctq/features.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <sstream>

#include "ctq/chrf.hpp"
#include "ctq/text.hpp"

namespace ctq {

namespace {

constexpr std::array<std::string_view, kFeatureCount> kNames = {
    "labse_in_src", "labse_in_tgt", "chrf_in_src",  "cmt_in_src",    "cmt_in_tgt",  "labse_src_tgt",
    "cmt_src_tgt",  "num_tok_in",   "num_tok_src",  "num_tok_tgt",   "ppl_src_tgt", "ppl_src_tgt_in",
};

constexpr std::string_view kStoreMagic = "#ctq-store v1";
constexpr double kUnitNormTolerance = 1e-6;

std::string embedding_key(std::string_view text, const StoreIds& ids)
{
    return hash_hex(text) + ":" + ids.embedding;
}

std::string pair_key(std::string_view a, std::string_view b, const StoreIds& ids)
{
    return hash_hex(a) + ":" + hash_hex(b) + ":" + ids.qe;
}

std::string ppl_key(std::string_view text, const StoreIds& ids)
{
    return hash_hex(text) + ":" + ids.lm;
}

std::string shorten(std::string_view text)
{
    constexpr std::size_t kMax = 40;
    if (text.size() <= kMax)
        return std::string(text);
    return std::string(text.substr(0, kMax)) + "...";
}

}  // namespace

std::string_view feature_name(Feature f)
{
    return kNames[static_cast<std::size_t>(f)];
}

std::optional<Feature> feature_from_name(std::string_view name)
{
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name)
            return static_cast<Feature>(i);
    }
    return std::nullopt;
}

const std::array<Feature, kFeatureCount>& all_features()
{
    static const auto features = [] {
        std::array<Feature, kFeatureCount> out{};
        for (std::size_t i = 0; i < kFeatureCount; ++i)
            out[i] = static_cast<Feature>(i);
        return out;
    }();
    return features;
}

double cosine(std::span<const double> a, std::span<const double> b)
{
    using Vec = Eigen::Map<const Eigen::VectorXd>;
    return cosine(Vec(a.data(), static_cast<Eigen::Index>(a.size())), Vec(b.data(), static_cast<Eigen::Index>(b.size())));
}

std::string_view store_kind_tag(StoreKind kind)
{
    switch (kind) {
    case StoreKind::embedding:
        return "emb";
    case StoreKind::pair_score:
        return "pair";
    case StoreKind::perplexity:
        return "ppl";
    }
    return "?";
}

std::string StoreKey::hashed() const
{
    std::string key;
    for (const auto& t : texts)
        key += hash_hex(t) + ":";
    return key + id;
}

std::string StoreKey::describe() const
{
    std::string out = std::string(feature_name(feature)) + " " + std::string(store_kind_tag(kind)) + "[" + id + "](";
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (i)
            out += ", ";
        out += "\"" + shorten(texts[i]) + "\"";
    }
    return out + ") key " + hashed();
}

MissingScoresError::MissingScoresError(std::vector<std::string> missing)
    : std::runtime_error([&] {
          std::string msg = "score store is missing " + std::to_string(missing.size()) + " entr" +
                            (missing.size() == 1 ? "y" : "ies") + ":";
          for (const auto& m : missing)
              msg += "\n  " + m;
          return msg;
      }()),
      missing_(std::move(missing))
{
}

ScoreStore::ScoreStore(ScoreStore&& other) noexcept
{
    std::unique_lock lock(other.mutex_);
    ids_ = std::move(other.ids_);
    embeddings_ = std::move(other.embeddings_);
    pair_scores_ = std::move(other.pair_scores_);
    perplexities_ = std::move(other.perplexities_);
}

ScoreStore& ScoreStore::operator=(ScoreStore&& other) noexcept
{
    if (this != &other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        ids_ = std::move(other.ids_);
        embeddings_ = std::move(other.embeddings_);
        pair_scores_ = std::move(other.pair_scores_);
        perplexities_ = std::move(other.perplexities_);
    }
    return *this;
}

void ScoreStore::put_embedding(std::string_view text, std::span<const float> vec)
{
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXf>(vec.data(), static_cast<Eigen::Index>(vec.size())).cast<double>();
    const double norm = v.norm();
    if (vec.empty() || norm == 0.0 || !std::isfinite(norm))
        throw std::invalid_argument("score store: embedding must be a finite non-zero vector");
    v /= norm;
    std::vector<float> unit(vec.size());
    for (std::size_t i = 0; i < unit.size(); ++i)
        unit[i] = static_cast<float>(v[static_cast<Eigen::Index>(i)]);
    std::unique_lock lock(mutex_);
    embeddings_[embedding_key(text, ids_)] = std::move(unit);
}

void ScoreStore::put_pair_score(std::string_view a, std::string_view b, double value)
{
    if (!std::isfinite(value))
        throw std::invalid_argument("score store: pair score must be finite");
    std::unique_lock lock(mutex_);
    pair_scores_[pair_key(a, b, ids_)] = value;
}

void ScoreStore::put_perplexity(std::string_view text, double value)
{
    if (!(value > 0.0) || !std::isfinite(value))
        throw std::invalid_argument("score store: perplexity must be finite and > 0");
    std::unique_lock lock(mutex_);
    perplexities_[ppl_key(text, ids_)] = value;
}

std::optional<std::vector<float>> ScoreStore::embedding(std::string_view text) const
{
    std::shared_lock lock(mutex_);
    const auto it = embeddings_.find(embedding_key(text, ids_));
    if (it == embeddings_.end())
        return std::nullopt;
    return it->second;
}

std::optional<double> ScoreStore::pair_score(std::string_view a, std::string_view b) const
{
    std::shared_lock lock(mutex_);
    const auto it = pair_scores_.find(pair_key(a, b, ids_));
    if (it == pair_scores_.end())
        return std::nullopt;
    return it->second;
}

std::optional<double> ScoreStore::perplexity(std::string_view text) const
{
    std::shared_lock lock(mutex_);
    const auto it = perplexities_.find(ppl_key(text, ids_));
    if (it == perplexities_.end())
        return std::nullopt;
    return it->second;
}

bool ScoreStore::contains(const StoreKey& key) const
{
    switch (key.kind) {
    case StoreKind::embedding:
        return embedding(key.texts.at(0)).has_value();
    case StoreKind::pair_score:
        return pair_score(key.texts.at(0), key.texts.at(1)).has_value();
    case StoreKind::perplexity:
        return perplexity(key.texts.at(0)).has_value();
    }
    return false;
}

std::size_t ScoreStore::size() const
{
    std::shared_lock lock(mutex_);
    return embeddings_.size() + pair_scores_.size() + perplexities_.size();
}

std::string encode_embedding(std::span<const float> vec)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(vec.size() * 8);
    for (float f : vec) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int byte = 0; byte < 4; ++byte) {
            const auto b = static_cast<unsigned>((bits >> (8 * byte)) & 0xFF);
            out.push_back(digits[b >> 4]);
            out.push_back(digits[b & 0xF]);
        }
    }
    return out;
}

std::vector<float> decode_embedding(std::string_view hex)
{
    if (hex.size() % 8 != 0 || hex.empty())
        throw std::invalid_argument("embedding payload length must be a non-zero multiple of 8");
    auto nibble = [](char c) -> std::uint32_t {
        if (c >= '0' && c <= '9')
            return static_cast<std::uint32_t>(c - '0');
        if (c >= 'a' && c <= 'f')
            return static_cast<std::uint32_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F')
            return static_cast<std::uint32_t>(c - 'A' + 10);
        throw std::invalid_argument("embedding payload is not hex");
    };
    std::vector<float> out(hex.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int byte = 0; byte < 4; ++byte) {
            const std::size_t pos = i * 8 + static_cast<std::size_t>(byte) * 2;
            bits |= ((nibble(hex[pos]) << 4) | nibble(hex[pos + 1])) << (8 * byte);
        }
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

void ScoreStore::put_record(std::string_view kind, std::string key, std::string_view payload, std::size_t line_no)
{
    auto fail = [&](const std::string& what) {
        return std::runtime_error("score store line " + std::to_string(line_no) + ": " + what);
    };
    try {
        if (kind == "emb") {
            auto vec = decode_embedding(payload);
            double sq = 0.0;
            for (float f : vec)
                sq += static_cast<double>(f) * static_cast<double>(f);
            if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance)
                throw fail("embedding is not unit-norm");
            std::unique_lock lock(mutex_);
            embeddings_[std::move(key)] = std::move(vec);
        } else if (kind == "pair") {
            const double v = parse_double(payload);
            if (!std::isfinite(v))
                throw fail("pair score must be finite");
            std::unique_lock lock(mutex_);
            pair_scores_[std::move(key)] = v;
        } else if (kind == "ppl") {
            const double v = parse_double(payload);
            if (!(v > 0.0) || !std::isfinite(v))
                throw fail("perplexity must be finite and > 0");
            std::unique_lock lock(mutex_);
            perplexities_[std::move(key)] = v;
        } else {
            throw fail("unknown record kind '" + std::string(kind) + "'");
        }
    } catch (const std::invalid_argument& e) {
        throw fail(e.what());
    }
}

void ScoreStore::merge_records(const std::string& content)
{
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
            throw std::runtime_error("score store line " + std::to_string(line_no) + ": expected 3 fields");
        put_record(std::string_view(line).substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                   std::string_view(line).substr(t2 + 1), line_no);
    }
}

std::string ScoreStore::serialize() const
{
    std::shared_lock lock(mutex_);
    std::vector<std::string> lines;
    lines.reserve(embeddings_.size() + pair_scores_.size() + perplexities_.size());
    for (const auto& [k, v] : embeddings_)
        lines.push_back("emb\t" + k + "\t" + encode_embedding(v));
    for (const auto& [k, v] : pair_scores_)
        lines.push_back("pair\t" + k + "\t" + format_double(v));
    for (const auto& [k, v] : perplexities_)
        lines.push_back("ppl\t" + k + "\t" + format_double(v));
    std::sort(lines.begin(), lines.end());
    std::string out(kStoreMagic);
    out += "\n";
    for (const auto& l : lines)
        out += l + "\n";
    return out;
}

ScoreStore ScoreStore::deserialize(const std::string& content, StoreIds ids)
{
    if (content.rfind(kStoreMagic, 0) != 0)
        throw std::runtime_error("score store: bad or missing version header");
    ScoreStore store(std::move(ids));
    store.merge_records(content);
    return store;
}

void ScoreStore::save(const std::filesystem::path& path) const
{
    write_file(path, serialize());
}

ScoreStore ScoreStore::load(const std::filesystem::path& path, StoreIds ids)
{
    return deserialize(read_file(path), std::move(ids));
}

std::optional<MissingPolicy> missing_policy_from_name(std::string_view name)
{
    if (name == "strict")
        return MissingPolicy::strict;
    if (name == "fill_default")
        return MissingPolicy::fill_default;
    return std::nullopt;
}

std::string ppl_text_example(const SentencePair& candidate)
{
    return candidate.source + "\n" + candidate.target;
}

std::string ppl_text_example_input(const SentencePair& candidate, std::string_view input)
{
    return candidate.source + "\n" + candidate.target + "\n" + std::string(input);
}

std::vector<StoreKey> required_keys(const SentencePair& candidate, std::string_view input, const StoreIds& ids)
{
    const std::string in(input);
    return {
        {StoreKind::embedding, {in}, ids.embedding, Feature::labse_in_src},
        {StoreKind::embedding, {candidate.source}, ids.embedding, Feature::labse_in_src},
        {StoreKind::embedding, {candidate.target}, ids.embedding, Feature::labse_in_tgt},
        {StoreKind::pair_score, {in, candidate.source}, ids.qe, Feature::cmt_in_src},
        {StoreKind::pair_score, {in, candidate.target}, ids.qe, Feature::cmt_in_tgt},
        {StoreKind::pair_score, {candidate.source, candidate.target}, ids.qe, Feature::cmt_src_tgt},
        {StoreKind::perplexity, {ppl_text_example(candidate)}, ids.lm, Feature::ppl_src_tgt},
        {StoreKind::perplexity, {ppl_text_example_input(candidate, input)}, ids.lm, Feature::ppl_src_tgt_in},
    };
}

FeatureVector extract_features(const SentencePair& candidate, std::string_view input, const ScoreStore& store,
                               MissingPolicy policy, const std::array<double, kFeatureCount>* defaults)
{
    if (policy == MissingPolicy::fill_default && defaults == nullptr)
        throw std::invalid_argument("extract_features: fill_default needs per-feature defaults");

    FeatureVector fv;
    std::vector<std::string> missing;
    auto miss = [&](Feature f, const StoreKey& key) {
        if (policy == MissingPolicy::strict) {
            auto what = key.describe();
            if (std::find(missing.begin(), missing.end(), what) == missing.end())
                missing.push_back(std::move(what));
        } else {
            fv[f] = (*defaults)[static_cast<std::size_t>(f)];
            fv.imputed = true;
        }
    };

    const auto keys = required_keys(candidate, input, store.ids());
    const auto emb_in = store.embedding(input);
    const auto emb_src = store.embedding(candidate.source);
    const auto emb_tgt = store.embedding(candidate.target);
    auto labse = [&](Feature f, const std::optional<std::vector<float>>& a, const StoreKey& key_a,
                     const std::optional<std::vector<float>>& b, const StoreKey& key_b) {
        if (a && b) {
            using Vec = Eigen::Map<const Eigen::VectorXf>;
            fv[f] = cosine(Vec(a->data(), static_cast<Eigen::Index>(a->size())),
                           Vec(b->data(), static_cast<Eigen::Index>(b->size())));
            return;
        }
        if (!a)
            miss(f, key_a);
        if (!b && (a || policy == MissingPolicy::strict))
            miss(f, key_b);
    };
    labse(Feature::labse_in_src, emb_in, keys[0], emb_src, keys[1]);
    labse(Feature::labse_in_tgt, emb_in, keys[0], emb_tgt, keys[2]);
    labse(Feature::labse_src_tgt, emb_src, keys[1], emb_tgt, keys[2]);

    fv[Feature::chrf_in_src] = chrf(input, candidate.source);

    for (std::size_t k = 3; k < keys.size(); ++k) {
        const auto& key = keys[k];
        std::optional<double> value = key.kind == StoreKind::pair_score
                                          ? store.pair_score(key.texts[0], key.texts[1])
                                          : store.perplexity(key.texts[0]);
        if (value)
            fv[key.feature] = *value;
        else
            miss(key.feature, key);
    }

    fv[Feature::num_tok_in] = static_cast<double>(token_count(input));
    fv[Feature::num_tok_src] = static_cast<double>(token_count(candidate.source));
    fv[Feature::num_tok_tgt] = static_cast<double>(token_count(candidate.target));

    if (!missing.empty())
        throw MissingScoresError(std::move(missing));
    return fv;
}

void validate_features(const FeatureVector& fv)
{
    for (auto f : all_features()) {
        const double v = fv[f];
        const std::string name(feature_name(f));
        if (!std::isfinite(v))
            throw std::domain_error(name + " is not finite");
        switch (f) {
        case Feature::chrf_in_src:
            if (v < 0.0 || v > 100.0)
                throw std::domain_error(name + " outside [0, 100]");
            break;
        case Feature::labse_in_src:
        case Feature::labse_in_tgt:
        case Feature::labse_src_tgt:
            if (v < -1.0 || v > 1.0)
                throw std::domain_error(name + " outside [-1, 1]");
            break;
        case Feature::num_tok_in:
        case Feature::num_tok_src:
        case Feature::num_tok_tgt:
            if (v < 0.0 || v != std::floor(v))
                throw std::domain_error(name + " is not a non-negative integer");
            break;
        case Feature::ppl_src_tgt:
        case Feature::ppl_src_tgt_in:
            if (!(v > 0.0))
                throw std::domain_error(name + " must be > 0");
            break;
        default:
            break;
        }
    }
}

}  // namespace ctq
