#include "ctq/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ctq/text.hpp"

namespace ctq {

namespace {

constexpr std::string_view kIndexMagic = "ctq-bm25 v1";

void check_params(const Bm25Params& p)
{
    if (!(p.k1 > 0.0))
        throw std::invalid_argument("bm25: k1 must be > 0");
    if (!(p.b >= 0.0 && p.b <= 1.0))
        throw std::invalid_argument("bm25: b must be in [0, 1]");
}

}  // namespace

Bm25Index Bm25Index::build(const ExampleDatabase& db, Bm25Params params)
{
    std::vector<std::string> docs;
    docs.reserve(db.size());
    for (const auto& p : db.pairs)
        docs.push_back(p.source);
    return build(docs, params);
}

Bm25Index Bm25Index::build(const std::vector<std::string>& documents, Bm25Params params)
{
    check_params(params);
    if (documents.empty())
        throw std::invalid_argument("bm25: cannot index an empty database");

    Bm25Index index;
    index.params_ = params;
    index.doc_lengths_.reserve(documents.size());
    double total = 0.0;
    for (std::size_t doc = 0; doc < documents.size(); ++doc) {
        const auto tokens = tokenize_for_retrieval(documents[doc]);
        std::map<std::string_view, std::uint32_t> counts;
        for (const auto& t : tokens)
            ++counts[t];
        for (const auto& [term, tf] : counts)
            index.postings_[std::string(term)].push_back({doc, tf});
        index.doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        total += static_cast<double>(tokens.size());
    }
    index.avg_doc_len_ = total / static_cast<double>(documents.size());
    return index;
}

double Bm25Index::idf(std::string_view term) const
{
    const auto it = postings_.find(std::string(term));
    const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
    const double n = static_cast<double>(doc_count());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::term_score(double idf, std::uint32_t tf, std::size_t doc) const
{
    const double f = static_cast<double>(tf);
    const double len = static_cast<double>(doc_lengths_[doc]);
    const double norm = 1.0 - params_.b + params_.b * len / avg_doc_len_;
    return idf * f * (params_.k1 + 1.0) / (f + params_.k1 * norm);
}

std::vector<std::string> Bm25Index::query_terms(std::string_view query) const
{
    // Distinct terms in lexicographic order; fixes the summation order.
    const auto tokens = tokenize_for_retrieval(query);
    std::set<std::string> unique(tokens.begin(), tokens.end());
    return {unique.begin(), unique.end()};
}

CandidateList Bm25Index::shortlist(std::string_view query, std::size_t n, std::size_t input_id) const
{
    if (n == 0)
        throw std::invalid_argument("shortlist: n must be >= 1");
    CandidateList out;
    out.input_id = input_id;

    std::unordered_map<std::size_t, double> acc;
    for (const auto& term : query_terms(query)) {
        const auto it = postings_.find(term);
        if (it == postings_.end())
            continue;
        const double w = idf(term);
        for (const auto& posting : it->second)
            acc[posting.doc] += term_score(w, posting.tf, posting.doc);
    }

    out.entries.reserve(acc.size());
    for (const auto& [doc, score] : acc) {
        if (score > 0.0)
            out.entries.push_back({doc, score});
    }
    const auto better = [](const ScoredCandidate& a, const ScoredCandidate& c) {
        if (a.score != c.score)
            return a.score > c.score;
        return a.pair_id < c.pair_id;
    };
    const std::size_t keep = std::min(n, out.entries.size());
    std::partial_sort(out.entries.begin(), out.entries.begin() + static_cast<std::ptrdiff_t>(keep),
                      out.entries.end(), better);
    out.entries.resize(keep);
    return out;
}

double Bm25Index::score_document(std::string_view query, std::size_t doc) const
{
    if (doc >= doc_count())
        throw std::out_of_range("bm25: document id out of range");
    double score = 0.0;
    for (const auto& term : query_terms(query)) {
        const auto it = postings_.find(term);
        if (it == postings_.end())
            continue;
        const auto pos = std::lower_bound(it->second.begin(), it->second.end(), doc,
                                          [](const Posting& p, std::size_t d) { return p.doc < d; });
        if (pos == it->second.end() || pos->doc != doc)
            continue;
        score += term_score(idf(term), pos->tf, doc);
    }
    return score;
}

std::string Bm25Index::serialize() const
{
    std::ostringstream out;
    out << kIndexMagic << "\n";
    out << "params\t" << format_double(params_.k1) << "\t" << format_double(params_.b) << "\n";
    out << "docs\t" << doc_count() << "\n";
    out << "lengths";
    for (auto len : doc_lengths_)
        out << "\t" << len;
    out << "\n";
    std::vector<const std::string*> terms;
    terms.reserve(postings_.size());
    for (const auto& [term, _] : postings_)
        terms.push_back(&term);
    std::sort(terms.begin(), terms.end(), [](const auto* a, const auto* b) { return *a < *b; });
    for (const auto* term : terms) {
        out << "t\t" << *term;
        for (const auto& p : postings_.at(*term))
            out << "\t" << p.doc << ":" << p.tf;
        out << "\n";
    }
    return out.str();
}

Bm25Index Bm25Index::deserialize(const std::string& content)
{
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || line != kIndexMagic)
        throw std::runtime_error("bm25 index: bad or missing version header");

    auto fields_of = [](const std::string& l) {
        std::vector<std::string> f;
        std::string cur;
        std::istringstream ls(l);
        while (std::getline(ls, cur, '\t'))
            f.push_back(cur);
        return f;
    };

    Bm25Index index;
    std::size_t expected_docs = 0;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto f = fields_of(line);
        if (f[0] == "params" && f.size() == 3) {
            index.params_ = {parse_double(f[1]), parse_double(f[2])};
        } else if (f[0] == "docs" && f.size() == 2) {
            expected_docs = std::stoull(f[1]);
        } else if (f[0] == "lengths") {
            for (std::size_t i = 1; i < f.size(); ++i)
                index.doc_lengths_.push_back(static_cast<std::uint32_t>(std::stoul(f[i])));
        } else if (f[0] == "t" && f.size() >= 3) {
            auto& list = index.postings_[f[1]];
            for (std::size_t i = 2; i < f.size(); ++i) {
                const auto colon = f[i].find(':');
                if (colon == std::string::npos)
                    throw std::runtime_error("bm25 index: bad posting '" + f[i] + "'");
                list.push_back({std::stoull(f[i].substr(0, colon)),
                                static_cast<std::uint32_t>(std::stoul(f[i].substr(colon + 1)))});
            }
        } else {
            throw std::runtime_error("bm25 index: unrecognised record '" + f[0] + "'");
        }
    }
    check_params(index.params_);
    if (index.doc_lengths_.size() != expected_docs || expected_docs == 0)
        throw std::runtime_error("bm25 index: document count mismatch");
    double total = 0.0;
    for (auto len : index.doc_lengths_)
        total += static_cast<double>(len);
    index.avg_doc_len_ = total / static_cast<double>(expected_docs);
    return index;
}

void Bm25Index::save(const std::filesystem::path& path) const
{
    write_file(path, serialize());
}

Bm25Index Bm25Index::load(const std::filesystem::path& path)
{
    return deserialize(read_file(path));
}

}  // namespace ctq
