#include "ctq/prompt.hpp"

#include <set>
#include <stdexcept>

#include "ctq/text.hpp"

namespace ctq {

void PromptSpec::validate() const
{
    if (delimiter.empty())
        throw std::invalid_argument("prompt: delimiter must be non-empty");
    if (src_lang.find(delimiter) != std::string::npos || tgt_lang.find(delimiter) != std::string::npos)
        throw std::invalid_argument("prompt: delimiter must not occur in a language name");
}

TokenCounter whitespace_tokenizer()
{
    return [](std::string_view text) { return token_count(text); };
}

std::string build_prompt(const std::vector<SentencePair>& examples, std::string_view input, const PromptSpec& spec)
{
    std::string out;
    for (const auto& ex : examples) {
        out += spec.src_lang + " sentence: " + ex.source + "\n";
        out += spec.tgt_lang + " sentence: " + ex.target + "\n";
        out += spec.delimiter + "\n";
    }
    out += spec.src_lang + " sentence: ";
    out += input;
    out += "\n" + spec.tgt_lang + " sentence:";
    return out;
}

std::vector<SentencePair> enforce_budget(const std::vector<SentencePair>& ranked, std::string_view input,
                                         const PromptSpec& spec, const TokenCounter& count)
{
    if (count(build_prompt({}, input, spec)) > spec.token_budget)
        throw BudgetError("input exceeds context budget");

    std::set<std::pair<std::string_view, std::string_view>> seen;
    std::vector<SentencePair> kept;
    for (const auto& ex : ranked)
        if (seen.emplace(ex.source, ex.target).second)
            kept.push_back(ex);
    while (!kept.empty() && count(build_prompt(kept, input, spec)) > spec.token_budget)
        kept.pop_back();
    return kept;
}

Completion postprocess_detailed(std::string_view completion, const PromptSpec& spec)
{
    Completion out;
    const auto cut = completion.find(spec.delimiter);
    if (cut == 0)
        out.empty_output = true;
    std::string text = trim(completion.substr(0, cut));
    const std::string echo = spec.tgt_lang + " sentence:";
    if (text.rfind(echo, 0) == 0)
        text = trim(std::string_view(text).substr(echo.size()));
    out.text = std::move(text);
    return out;
}

}  // namespace ctq
