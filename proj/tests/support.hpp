#pragma once

// Independent reference implementations used as test oracles, plus small
// synthetic-corpus generators. Nothing here calls the code under test except
// tokenize_for_retrieval, which defines what a BM25 term is.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctq/corpus.hpp"
#include "ctq/rng.hpp"
#include "ctq/text.hpp"

namespace ctq::test {

/// Decodes UTF-8 without validation; enough for the well-formed test strings.
inline std::vector<std::uint32_t> naive_codepoints(const std::string& s)
{
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
        std::uint32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
        for (int k = 1; k < len; ++k)
            cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
        out.push_back(cp);
        i += len;
    }
    return out;
}

/// ASCII-whitespace collapse used by the oracle.
inline std::vector<std::uint32_t> oracle_normalize(const std::string& s)
{
    std::vector<std::uint32_t> out;
    bool pending_space = false;
    for (auto cp : naive_codepoints(s)) {
        const bool space = cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r';
        if (space) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space)
            out.push_back(' ');
        pending_space = false;
        out.push_back(cp);
    }
    return out;
}

/// chrF by explicit occurrence matching: every hypothesis n-gram occurrence
/// claims one unclaimed identical reference occurrence.
inline double brute_chrf(const std::string& hyp_text, const std::string& ref_text, int max_n = 6, double beta = 2.0)
{
    const auto hyp = oracle_normalize(hyp_text);
    const auto ref = oracle_normalize(ref_text);
    if (hyp.empty() && ref.empty())
        return 0.0;
    double p_sum = 0.0, r_sum = 0.0;
    int orders = 0;
    for (int n = 1; n <= max_n; ++n) {
        std::vector<std::vector<std::uint32_t>> hg, rg;
        for (std::size_t i = 0; i + n <= hyp.size(); ++i)
            hg.emplace_back(hyp.begin() + i, hyp.begin() + i + n);
        for (std::size_t i = 0; i + n <= ref.size(); ++i)
            rg.emplace_back(ref.begin() + i, ref.begin() + i + n);
        if (hg.empty() && rg.empty())
            continue;
        std::vector<bool> used(rg.size(), false);
        long matches = 0;
        for (const auto& g : hg) {
            for (std::size_t j = 0; j < rg.size(); ++j) {
                if (!used[j] && rg[j] == g) {
                    used[j] = true;
                    ++matches;
                    break;
                }
            }
        }
        p_sum += hg.empty() ? 0.0 : double(matches) / double(hg.size());
        r_sum += rg.empty() ? 0.0 : double(matches) / double(rg.size());
        ++orders;
    }
    const double p = p_sum / orders, r = r_sum / orders, b2 = beta * beta;
    return b2 * p + r == 0.0 ? 0.0 : 100.0 * (1 + b2) * p * r / (b2 * p + r);
}

struct OracleHit {
    std::size_t doc;
    double score;
};

/// Exhaustive Okapi BM25: recounts tf/df from the raw documents and scores
/// every document, summing distinct query terms in lexicographic order.
inline std::vector<OracleHit> brute_bm25(const std::vector<std::string>& docs, const std::string& query,
                                         std::size_t n, double k1 = 1.2, double b = 0.75)
{
    std::vector<std::vector<std::string>> toks;
    double total = 0.0;
    for (const auto& d : docs) {
        toks.push_back(tokenize_for_retrieval(d));
        total += double(toks.back().size());
    }
    const double N = double(docs.size());
    const double avg = total / N;
    auto qt = tokenize_for_retrieval(query);
    std::sort(qt.begin(), qt.end());
    qt.erase(std::unique(qt.begin(), qt.end()), qt.end());

    std::vector<OracleHit> hits;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double score = 0.0;
        for (const auto& t : qt) {
            const double tf = double(std::count(toks[d].begin(), toks[d].end(), t));
            if (tf == 0.0)
                continue;
            double df = 0.0;
            for (const auto& other : toks)
                df += std::find(other.begin(), other.end(), t) != other.end() ? 1.0 : 0.0;
            const double idf = std::log(1.0 + (N - df + 0.5) / (df + 0.5));
            const double norm = 1.0 - b + b * double(toks[d].size()) / avg;
            score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
        }
        if (score > 0.0)
            hits.push_back({d, score});
    }
    std::sort(hits.begin(), hits.end(), [](const OracleHit& x, const OracleHit& y) {
        return x.score != y.score ? x.score > y.score : x.doc < y.doc;
    });
    if (hits.size() > n)
        hits.resize(n);
    return hits;
}

/// Zipf-ish synthetic vocabulary sentence.
inline std::string random_sentence(Rng& rng, const std::vector<std::string>& vocab, std::size_t min_len,
                                   std::size_t max_len)
{
    const auto len = min_len + uniform_index(rng, max_len - min_len + 1);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        // squaring the uniform skews draws toward the head of the vocabulary
        const double u = uniform01(rng);
        const auto idx = static_cast<std::size_t>(u * u * double(vocab.size()));
        s += (i ? " " : "") + vocab[std::min(idx, vocab.size() - 1)];
    }
    return s;
}

inline std::vector<std::string> make_vocab(std::size_t size, const std::string& prefix = "w")
{
    std::vector<std::string> v;
    for (std::size_t i = 0; i < size; ++i)
        v.push_back(prefix + std::to_string(i));
    return v;
}

/// Parallel pairs whose target is the source with a per-word suffix, so
/// targets are deterministic "translations".
inline std::vector<SentencePair> make_pairs(Rng& rng, const std::vector<std::string>& vocab, std::size_t count,
                                            std::size_t min_len = 4, std::size_t max_len = 12)
{
    std::vector<SentencePair> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto src = random_sentence(rng, vocab, min_len, max_len);
        std::string tgt;
        for (const auto& w : split_whitespace(src))
            tgt += (tgt.empty() ? "" : " ") + w + "x";
        out.push_back({i, src, tgt});
    }
    return out;
}

inline std::string to_tsv(const std::vector<SentencePair>& pairs)
{
    std::string out;
    for (const auto& p : pairs)
        out += p.source + "\t" + p.target + "\n";
    return out;
}

inline std::vector<std::string> split_lines(const std::string& text)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string::npos)
            nl = text.size();
        out.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("ctq-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Every regular file under `root`, relative path -> bytes.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& root)
{
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[std::filesystem::relative(e.path(), root).generic_string()] = read_file(e.path());
    return out;
}

inline std::string fixture(const std::string& name)
{
    return std::string(CTQ_FIXTURE_DIR) + "/" + name;
}

}  // namespace ctq::test
