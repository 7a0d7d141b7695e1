#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctq/corpus.hpp"

namespace ctq {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Posting {
    std::size_t doc = 0;
    std::uint32_t tf = 0;

    friend bool operator==(const Posting&, const Posting&) = default;
};

struct ScoredCandidate {
    std::size_t pair_id = 0;
    double score = 0.0;
};

/// Shortlist for one query: descending score, ties by ascending pair id.
struct CandidateList {
    std::size_t input_id = 0;
    std::vector<ScoredCandidate> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

/// Okapi BM25 over the source side of an example database.
///
/// Term weight is ln(1 + (N - df + 0.5) / (df + 0.5)), which stays positive
/// for terms present in every document.
class Bm25Index {
public:
    Bm25Index() = default;

    static Bm25Index build(const ExampleDatabase& db, Bm25Params params = {});
    static Bm25Index build(const std::vector<std::string>& documents, Bm25Params params = {});

    /// Top-n documents with non-zero score. Empty when no query term is indexed.
    CandidateList shortlist(std::string_view query, std::size_t n, std::size_t input_id = 0) const;

    double idf(std::string_view term) const;

    /// Score of one document recomputed from its stored postings.
    double score_document(std::string_view query, std::size_t doc) const;

    const std::unordered_map<std::string, std::vector<Posting>>& postings() const { return postings_; }
    const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
    std::size_t doc_count() const { return doc_lengths_.size(); }
    double avg_doc_len() const { return avg_doc_len_; }
    const Bm25Params& params() const { return params_; }

    void save(const std::filesystem::path& path) const;
    static Bm25Index load(const std::filesystem::path& path);
    std::string serialize() const;
    static Bm25Index deserialize(const std::string& content);

private:
    double term_score(double idf, std::uint32_t tf, std::size_t doc) const;
    std::vector<std::string> query_terms(std::string_view query) const;

    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::uint32_t> doc_lengths_;
    double avg_doc_len_ = 0.0;
    Bm25Params params_;
};

}  // namespace ctq
