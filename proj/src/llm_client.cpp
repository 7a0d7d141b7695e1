#include "ctq/llm_client.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

namespace ctq {

double NllResponse::perplexity() const
{
    if (token_count == 0)
        throw std::domain_error("perplexity of an empty text is undefined");
    return std::exp(nll / static_cast<double>(token_count));
}

std::string_view client_error_kind_name(ClientErrorKind kind)
{
    switch (kind) {
    case ClientErrorKind::timeout:
        return "timeout";
    case ClientErrorKind::transport:
        return "transport";
    case ClientErrorKind::http_status:
        return "http_status";
    case ClientErrorKind::malformed_response:
        return "malformed_response";
    case ClientErrorKind::unsupported:
        return "unsupported";
    case ClientErrorKind::failed:
        return "failed";
    }
    return "?";
}

NllResponse GenerationClient::score_nll(std::string_view)
{
    throw ClientError(ClientErrorKind::unsupported, "client does not implement score_nll");
}

std::vector<BatchSlot> batch_generate(GenerationClient& client, const std::vector<GenerationRequest>& requests,
                                      std::size_t max_in_flight)
{
    std::vector<BatchSlot> slots(requests.size());
    auto run = [&](std::size_t i) {
        try {
            slots[i].response = client.generate(requests[i]);
        } catch (const ClientError& e) {
            slots[i].error = e;
        } catch (const std::exception& e) {
            slots[i].error = ClientError(ClientErrorKind::failed, e.what());
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(1, max_in_flight), requests.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < requests.size(); ++i)
            run(i);
        return slots;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < requests.size(); i = next++)
                run(i);
        });
    }
    for (auto& t : pool)
        t.join();
    return slots;
}

nlohmann::json to_json(const GenerationRequest& request)
{
    nlohmann::json body = {{"prompt", request.prompt},
                           {"max_new_tokens", request.max_new_tokens},
                           {"decoding", "greedy"},
                           {"stop", nullptr}};
    if (request.stop)
        body["stop"] = *request.stop;
    return body;
}

GenerationRequest generation_request_from_json(const nlohmann::json& body)
{
    GenerationRequest r;
    try {
        r.prompt = body.at("prompt").get<std::string>();
        r.max_new_tokens = body.value("max_new_tokens", r.max_new_tokens);
        const auto decoding = body.value("decoding", std::string("greedy"));
        if (decoding != "greedy")
            throw ClientError(ClientErrorKind::malformed_response, "unsupported decoding '" + decoding + "'");
        if (body.contains("stop") && !body["stop"].is_null())
            r.stop = body["stop"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ClientError(ClientErrorKind::malformed_response, std::string("bad generate request: ") + e.what());
    }
    return r;
}

nlohmann::json to_json(const GenerationResponse& response)
{
    return {{"completion", response.completion},
            {"prompt_tokens", response.prompt_tokens},
            {"completion_tokens", response.completion_tokens}};
}

GenerationResponse generation_response_from_json(const nlohmann::json& body)
{
    if (!body.is_object() || !body.contains("completion") || !body["completion"].is_string())
        throw ClientError(ClientErrorKind::malformed_response, "generate response lacks a string 'completion'");
    GenerationResponse r;
    r.completion = body["completion"].get<std::string>();
    try {
        r.prompt_tokens = body.value("prompt_tokens", std::size_t{0});
        r.completion_tokens = body.value("completion_tokens", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw ClientError(ClientErrorKind::malformed_response, std::string("bad token counts: ") + e.what());
    }
    return r;
}

nlohmann::json nll_request_json(std::string_view text)
{
    return {{"text", std::string(text)}};
}

NllResponse nll_response_from_json(const nlohmann::json& body)
{
    if (!body.is_object() || !body.contains("nll") || !body["nll"].is_number() || !body.contains("token_count") ||
        !body["token_count"].is_number_unsigned())
        throw ClientError(ClientErrorKind::malformed_response, "score_nll response needs numeric 'nll' and 'token_count'");
    return {body["nll"].get<double>(), body["token_count"].get<std::size_t>()};
}

std::optional<std::string> endpoint_from_env()
{
    if (const char* v = std::getenv("CTQ_ENDPOINT"); v && *v)
        return std::string(v);
    return std::nullopt;
}

HttpClient::HttpClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint))
{
    const auto scheme = endpoint_.url.find("://");
    if (scheme == std::string::npos || endpoint_.url.substr(0, scheme) != "http")
        throw std::invalid_argument("endpoint must be an http:// URL: " + endpoint_.url);
    const auto slash = endpoint_.url.find('/', scheme + 3);
    host_ = endpoint_.url.substr(0, slash);
    if (slash != std::string::npos) {
        path_prefix_ = endpoint_.url.substr(slash);
        while (!path_prefix_.empty() && path_prefix_.back() == '/')
            path_prefix_.pop_back();
    }
}

nlohmann::json HttpClient::post_once(const std::string& route, const std::string& body)
{
    httplib::Client cli(host_);
    const auto secs = static_cast<time_t>(endpoint_.timeout_s);
    const auto usecs = static_cast<time_t>((endpoint_.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    auto res = cli.Post(path_prefix_ + route, body, "application/json");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout)
            throw ClientError(ClientErrorKind::timeout, "request to " + route + " timed out or was cut off");
        throw ClientError(ClientErrorKind::transport, "request to " + route + " failed: " + httplib::to_string(err));
    }
    if (res->status < 200 || res->status >= 300) {
        std::string detail = res->body.substr(0, 200);
        throw ClientError(ClientErrorKind::http_status,
                          route + " returned HTTP " + std::to_string(res->status) + ": " + detail, res->status);
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
        throw ClientError(ClientErrorKind::malformed_response, route + " returned invalid JSON");
    }
}

nlohmann::json HttpClient::post(const std::string& route, const nlohmann::json& body)
{
    const std::string payload = body.dump();
    double backoff = endpoint_.backoff_initial_s;
    for (int attempt = 0;; ++attempt) {
        try {
            return post_once(route, payload);
        } catch (const ClientError& e) {
            if (!e.retryable() || attempt >= endpoint_.max_retries)
                throw;
        }
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
    }
}

GenerationResponse HttpClient::generate(const GenerationRequest& request)
{
    return generation_response_from_json(post("/generate", to_json(request)));
}

NllResponse HttpClient::score_nll(std::string_view text)
{
    return nll_response_from_json(post("/score_nll", nll_request_json(text)));
}

}  // namespace ctq
