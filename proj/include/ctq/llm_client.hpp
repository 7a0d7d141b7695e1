#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ctq {

/// Only greedy decoding is supported.
enum class Decoding { greedy };

struct GenerationRequest {
    std::string prompt;
    std::size_t max_new_tokens = 256;
    Decoding decoding = Decoding::greedy;
    std::optional<std::string> stop;
};

struct GenerationResponse {
    std::string completion;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

/// Summed negative log-likelihood of a text and its token count.
struct NllResponse {
    double nll = 0.0;
    std::size_t token_count = 0;

    double perplexity() const;
};

enum class ClientErrorKind { timeout, transport, http_status, malformed_response, unsupported, failed };

std::string_view client_error_kind_name(ClientErrorKind kind);

class ClientError : public std::runtime_error {
public:
    ClientError(ClientErrorKind kind, const std::string& what, int status = 0)
        : std::runtime_error(what), kind_(kind), status_(status)
    {
    }
    ClientErrorKind kind() const { return kind_; }
    int status() const { return status_; }
    bool retryable() const
    {
        return kind_ == ClientErrorKind::timeout || kind_ == ClientErrorKind::transport ||
               (kind_ == ClientErrorKind::http_status && status_ >= 500);
    }

private:
    ClientErrorKind kind_;
    int status_;
};

/// Anything that can complete prompts. Implementations must be safe to call
/// from several threads at once.
class GenerationClient {
public:
    virtual ~GenerationClient() = default;
    virtual GenerationResponse generate(const GenerationRequest& request) = 0;
    virtual NllResponse score_nll(std::string_view text);
};

struct BatchSlot {
    std::optional<GenerationResponse> response;
    std::optional<ClientError> error;

    bool ok() const { return response.has_value(); }
};

/// Issues every request with at most `max_in_flight` outstanding at once and
/// returns one slot per request, in request order.
std::vector<BatchSlot> batch_generate(GenerationClient& client, const std::vector<GenerationRequest>& requests,
                                      std::size_t max_in_flight = 8);

// Wire format of the `/generate` and `/score_nll` endpoints.
nlohmann::json to_json(const GenerationRequest& request);
GenerationRequest generation_request_from_json(const nlohmann::json& body);
nlohmann::json to_json(const GenerationResponse& response);
GenerationResponse generation_response_from_json(const nlohmann::json& body);
nlohmann::json nll_request_json(std::string_view text);
NllResponse nll_response_from_json(const nlohmann::json& body);

struct HttpEndpoint {
    /// e.g. `http://127.0.0.1:8080` or `http://host:port/prefix`.
    std::string url;
    double timeout_s = 60.0;
    int max_retries = 3;
    double backoff_initial_s = 0.5;
};

/// Endpoint URL from the CTQ_ENDPOINT environment variable, if set.
std::optional<std::string> endpoint_from_env();

/// JSON-over-HTTP client: POST `/generate` and `/score_nll`. Retryable
/// failures (timeouts, transport errors, 5xx) are retried with exponential
/// backoff.
class HttpClient : public GenerationClient {
public:
    explicit HttpClient(HttpEndpoint endpoint);

    GenerationResponse generate(const GenerationRequest& request) override;
    NllResponse score_nll(std::string_view text) override;

private:
    nlohmann::json post(const std::string& route, const nlohmann::json& body);
    nlohmann::json post_once(const std::string& route, const std::string& body);

    HttpEndpoint endpoint_;
    std::string host_;
    std::string path_prefix_;
};

}  // namespace ctq
