#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ctq/corpus.hpp"

namespace ctq {

struct PromptSpec {
    std::string src_lang = "Source";
    std::string tgt_lang = "Target";
    std::string delimiter = "###";
    std::size_t token_budget = 1000;

    /// Throws std::invalid_argument if the delimiter is empty or occurs in a
    /// language name.
    void validate() const;
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Whitespace token counter used by default for the context budget.
TokenCounter whitespace_tokenizer();

/// k-shot translation prompt. Each example becomes
///   `<Src> sentence: <x>\n<Tgt> sentence: <y>\n###\n`
/// followed by `<Src> sentence: <input>\n<Tgt> sentence:` with no trailing
/// newline. Examples appear in the order given.
std::string build_prompt(const std::vector<SentencePair>& examples, std::string_view input, const PromptSpec& spec);

class BudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Removes duplicate examples, then drops examples from the lowest-ranked end
/// (index 0 = best) until the whole prompt fits the token budget, so the
/// survivors are always a prefix of the deduplicated ranking. Throws
/// BudgetError when the query block alone exceeds the budget.
std::vector<SentencePair> enforce_budget(const std::vector<SentencePair>& ranked, std::string_view input,
                                         const PromptSpec& spec, const TokenCounter& count = whitespace_tokenizer());

struct Completion {
    std::string text;
    /// The completion began with the delimiter, so nothing was kept.
    bool empty_output = false;
};

/// Cuts the completion at the first delimiter, trims it and removes one
/// leading `<Tgt> sentence:` echo.
Completion postprocess_detailed(std::string_view completion, const PromptSpec& spec);

inline std::string postprocess(std::string_view completion, const PromptSpec& spec)
{
    return postprocess_detailed(completion, spec).text;
}

}  // namespace ctq
