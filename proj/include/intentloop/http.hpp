#ifndef INTENTLOOP_HTTP_HPP
#define INTENTLOOP_HTTP_HPP

#include <functional>
#include <memory>
#include <string>

#include "intentloop/error.hpp"

namespace intentloop {

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// POSTs a JSON body and returns the raw response. Throws on transport
/// failure (connection refused, timeout).
class JsonPoster {
public:
    virtual ~JsonPoster() = default;
    virtual HttpResponse post(const std::string& body) const = 0;
};

/// cpp-httplib backed poster for http:// and https:// URLs. A fresh client is
/// created per request, so concurrent calls are safe.
class HttpJsonPoster final : public JsonPoster {
public:
    HttpJsonPoster(std::string url, std::string bearer_token, int timeout_ms);
    HttpResponse post(const std::string& body) const override;

private:
    std::string origin_;
    std::string path_;
    std::string bearer_;
    int timeout_ms_;
};

/// Adapter for tests and in-process fakes.
class FunctionPoster final : public JsonPoster {
public:
    explicit FunctionPoster(std::function<HttpResponse(const std::string&)> fn) : fn_(std::move(fn)) {}
    HttpResponse post(const std::string& body) const override { return fn_(body); }

private:
    std::function<HttpResponse(const std::string&)> fn_;
};

struct RetryPolicy {
    int max_retries = 3;
    int initial_backoff_ms = 500;
};

/// POSTs with exponential backoff. Non-2xx statuses and transport errors are
/// retried; returns the body of the first 2xx response or throws Error with
/// `failure_code` after max_retries retries.
std::string post_with_retries(const JsonPoster& poster, const std::string& body, const RetryPolicy& policy,
                              ErrorCode failure_code);

}  // namespace intentloop

#endif  // INTENTLOOP_HTTP_HPP
