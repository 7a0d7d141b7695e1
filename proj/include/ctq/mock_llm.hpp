#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ctq/corpus.hpp"
#include "ctq/llm_client.hpp"

namespace ctq {

/// Example pairs and query recovered from a prompt built by build_prompt.
struct ParsedPrompt {
    std::vector<SentencePair> examples;
    std::string query;
};

ParsedPrompt parse_prompt(std::string_view prompt, std::string_view delimiter = "###");

/// Returns the reference translation of the prompt's query from a fixture
/// map, or a default string for unknown queries.
class EchoMock : public GenerationClient {
public:
    explicit EchoMock(std::map<std::string, std::string> references, std::string unknown = "UNK");
    GenerationResponse generate(const GenerationRequest& request) override;

private:
    std::map<std::string, std::string> references_;
    std::string unknown_;
};

/// Exact prompt -> completion table.
class TableMock : public GenerationClient {
public:
    explicit TableMock(std::map<std::string, std::string> table, std::string fallback = "UNK");
    GenerationResponse generate(const GenerationRequest& request) override;

private:
    std::map<std::string, std::string> table_;
    std::string fallback_;
};

/// Returns a prefix of the reference whose length grows with the best chrF
/// between the query and any in-prompt example source, so translation quality
/// depends on example relevance. Also answers score_nll from a lexical
/// perplexity stand-in.
class OverlapMock : public GenerationClient {
public:
    explicit OverlapMock(std::map<std::string, std::string> references, std::string delimiter = "###");
    GenerationResponse generate(const GenerationRequest& request) override;
    NllResponse score_nll(std::string_view text) override;

private:
    std::map<std::string, std::string> references_;
    std::string delimiter_;
};

/// Wraps a callable; optional per-call delay and an in-flight counter for
/// concurrency assertions.
class CallbackMock : public GenerationClient {
public:
    using Handler = std::function<std::string(const GenerationRequest&)>;
    using Delay = std::function<std::chrono::microseconds(const GenerationRequest&)>;

    explicit CallbackMock(Handler handler, Delay delay = {});
    GenerationResponse generate(const GenerationRequest& request) override;

    std::size_t peak_in_flight() const { return peak_.load(); }
    std::size_t calls() const { return calls_.load(); }

private:
    Handler handler_;
    Delay delay_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> peak_{0};
    std::atomic<std::size_t> calls_{0};
};

}  // namespace ctq
