#include "intentloop/http.hpp"

#include <chrono>
#include <regex>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace intentloop {

HttpJsonPoster::HttpJsonPoster(std::string url, std::string bearer_token, int timeout_ms)
    : bearer_(std::move(bearer_token)), timeout_ms_(timeout_ms) {
    static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch match;
    if (!std::regex_match(url, match, pattern))
        throw Error(ErrorCode::ConfigError, "invalid endpoint URL '" + url + "'");
    origin_ = match[1].str();
    path_ = match[2].matched ? match[2].str() : "/";
}

HttpResponse HttpJsonPoster::post(const std::string& body) const {
    httplib::Client client(origin_);
    const auto timeout = std::chrono::milliseconds(timeout_ms_);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!bearer_.empty()) headers.emplace("Authorization", "Bearer " + bearer_);
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) throw std::runtime_error("HTTP transport error: " + httplib::to_string(res.error()));
    return {res->status, res->body};
}

std::string post_with_retries(const JsonPoster& poster, const std::string& body, const RetryPolicy& policy,
                              ErrorCode failure_code) {
    std::string last_error;
    int backoff = policy.initial_backoff_ms;
    for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
        try {
            HttpResponse res = poster.post(body);
            if (res.status >= 200 && res.status < 300) return std::move(res.body);
            last_error = "HTTP status " + std::to_string(res.status);
        } catch (const std::exception& e) {
            last_error = e.what();
        }
        spdlog::warn("request attempt {} failed: {}", attempt + 1, last_error);
    }
    throw Error(failure_code, "request failed after " + std::to_string(policy.max_retries) +
                                  " retries: " + last_error);
}

}  // namespace intentloop
