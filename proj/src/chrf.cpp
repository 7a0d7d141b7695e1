#include "ctq/chrf.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

#include "ctq/text.hpp"

namespace ctq {

namespace {

using NgramCounts = std::map<std::u32string_view, int>;

NgramCounts count_ngrams(std::u32string_view text, std::size_t n)
{
    NgramCounts counts;
    if (text.size() < n)
        return counts;
    for (std::size_t i = 0; i + n <= text.size(); ++i)
        ++counts[text.substr(i, n)];
    return counts;
}

}  // namespace

ChrfResult chrf_detailed(std::string_view hypothesis, std::string_view reference, int max_n, double beta)
{
    if (max_n < 1)
        throw std::invalid_argument("chrf: max_n must be >= 1");
    if (!(beta > 0.0))
        throw std::invalid_argument("chrf: beta must be > 0");

    const std::u32string hyp = utf8_decode(normalize_whitespace(hypothesis));
    const std::u32string ref = utf8_decode(normalize_whitespace(reference));
    if (hyp.empty() && ref.empty())
        return {0.0, true};

    double precision_sum = 0.0;
    double recall_sum = 0.0;
    int orders = 0;
    for (int n = 1; n <= max_n; ++n) {
        const auto order = static_cast<std::size_t>(n);
        const std::size_t hyp_total = hyp.size() >= order ? hyp.size() - order + 1 : 0;
        const std::size_t ref_total = ref.size() >= order ? ref.size() - order + 1 : 0;
        if (hyp_total == 0 && ref_total == 0)
            continue;
        const auto hyp_counts = count_ngrams(hyp, order);
        const auto ref_counts = count_ngrams(ref, order);
        long matches = 0;
        for (const auto& [gram, count] : hyp_counts) {
            const auto it = ref_counts.find(gram);
            if (it != ref_counts.end())
                matches += std::min(count, it->second);
        }
        precision_sum += hyp_total ? static_cast<double>(matches) / static_cast<double>(hyp_total) : 0.0;
        recall_sum += ref_total ? static_cast<double>(matches) / static_cast<double>(ref_total) : 0.0;
        ++orders;
    }

    const double p = precision_sum / orders;
    const double r = recall_sum / orders;
    const double beta2 = beta * beta;
    const double denom = beta2 * p + r;
    if (denom == 0.0)
        return {0.0, false};
    return {100.0 * (1.0 + beta2) * p * r / denom, false};
}

}  // namespace ctq
