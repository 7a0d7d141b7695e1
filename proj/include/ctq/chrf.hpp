#pragma once

#include <string_view>

namespace ctq {

struct ChrfResult {
    double score = 0.0;
    /// Both texts were empty after whitespace normalization.
    bool degenerate = false;
};

/// Character n-gram F-score in [0, 100].
///
/// Text is whitespace-normalized (trimmed, internal runs collapsed to one
/// space) and n-grams are taken over the resulting code point stream,
/// spaces included. Precision and recall are macro-averaged over the orders
/// 1..max_n, skipping orders where neither side has an n-gram.
ChrfResult chrf_detailed(std::string_view hypothesis, std::string_view reference, int max_n = 6, double beta = 2.0);

inline double chrf(std::string_view hypothesis, std::string_view reference, int max_n = 6, double beta = 2.0)
{
    return chrf_detailed(hypothesis, reference, max_n, beta).score;
}

}  // namespace ctq
