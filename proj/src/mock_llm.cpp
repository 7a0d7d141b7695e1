#include "ctq/mock_llm.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "ctq/chrf.hpp"
#include "ctq/desk_store.hpp"
#include "ctq/text.hpp"

namespace ctq {

namespace {

constexpr std::string_view kMarker = " sentence:";

/// Text after `<Lang> sentence:` on one line, or nullopt.
std::optional<std::string> sentence_body(std::string_view line)
{
    const auto pos = line.find(kMarker);
    if (pos == std::string_view::npos)
        return std::nullopt;
    auto rest = line.substr(pos + kMarker.size());
    if (!rest.empty() && rest.front() == ' ')
        rest.remove_prefix(1);
    return std::string(rest);
}

std::size_t count_tokens(std::string_view text)
{
    return token_count(text);
}

}  // namespace

ParsedPrompt parse_prompt(std::string_view prompt, std::string_view delimiter)
{
    std::vector<std::string_view> lines;
    std::string_view rest = prompt;
    for (;;) {
        const auto nl = rest.find('\n');
        lines.push_back(rest.substr(0, nl));
        if (nl == std::string_view::npos)
            break;
        rest.remove_prefix(nl + 1);
    }
    ParsedPrompt parsed;
    std::vector<std::string> pending;
    for (const auto line : lines) {
        if (line == delimiter) {
            if (pending.size() >= 2)
                parsed.examples.push_back({parsed.examples.size(), pending[0], pending[1]});
            pending.clear();
            continue;
        }
        if (auto body = sentence_body(line))
            pending.push_back(std::move(*body));
    }
    if (!pending.empty())
        parsed.query = pending.front();
    return parsed;
}

EchoMock::EchoMock(std::map<std::string, std::string> references, std::string unknown)
    : references_(std::move(references)), unknown_(std::move(unknown))
{
}

GenerationResponse EchoMock::generate(const GenerationRequest& request)
{
    const auto parsed = parse_prompt(request.prompt);
    const auto it = references_.find(parsed.query);
    GenerationResponse r;
    r.completion = it == references_.end() ? unknown_ : it->second;
    r.completion += "\n###\n";
    r.prompt_tokens = count_tokens(request.prompt);
    r.completion_tokens = count_tokens(r.completion);
    return r;
}

TableMock::TableMock(std::map<std::string, std::string> table, std::string fallback)
    : table_(std::move(table)), fallback_(std::move(fallback))
{
}

GenerationResponse TableMock::generate(const GenerationRequest& request)
{
    const auto it = table_.find(request.prompt);
    GenerationResponse r;
    r.completion = it == table_.end() ? fallback_ : it->second;
    r.prompt_tokens = count_tokens(request.prompt);
    r.completion_tokens = count_tokens(r.completion);
    return r;
}

OverlapMock::OverlapMock(std::map<std::string, std::string> references, std::string delimiter)
    : references_(std::move(references)), delimiter_(std::move(delimiter))
{
}

GenerationResponse OverlapMock::generate(const GenerationRequest& request)
{
    const auto parsed = parse_prompt(request.prompt, delimiter_);
    GenerationResponse r;
    const auto it = references_.find(parsed.query);
    if (it == references_.end()) {
        r.completion = "UNK";
    } else {
        double best = 0.0;
        for (const auto& ex : parsed.examples)
            best = std::max(best, chrf(parsed.query, ex.source));
        const auto words = split_whitespace(it->second);
        const auto keep = static_cast<std::size_t>(std::ceil(best / 100.0 * static_cast<double>(words.size())));
        for (std::size_t i = 0; i < keep && i < words.size(); ++i)
            r.completion += (i ? " " : "") + words[i];
    }
    r.completion += "\n" + delimiter_ + "\n";
    r.prompt_tokens = count_tokens(request.prompt);
    r.completion_tokens = count_tokens(r.completion);
    return r;
}

NllResponse OverlapMock::score_nll(std::string_view text)
{
    const std::size_t n = std::max<std::size_t>(1, count_tokens(text));
    return {static_cast<double>(n) * std::log(lexical_perplexity(text)), n};
}

CallbackMock::CallbackMock(Handler handler, Delay delay) : handler_(std::move(handler)), delay_(std::move(delay)) {}

GenerationResponse CallbackMock::generate(const GenerationRequest& request)
{
    ++calls_;
    const auto now = ++in_flight_;
    auto peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    struct Leave {
        std::atomic<std::size_t>& counter;
        ~Leave() { --counter; }
    } leave{in_flight_};
    if (delay_)
        std::this_thread::sleep_for(delay_(request));
    GenerationResponse r;
    r.completion = handler_(request);
    r.prompt_tokens = count_tokens(request.prompt);
    r.completion_tokens = count_tokens(r.completion);
    return r;
}

}  // namespace ctq
