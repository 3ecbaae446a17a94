#include <cstdlib>

#include <httplib.h>

#include "fairmonitor/gateway.h"

namespace fairmonitor {

namespace {

// "https://host:port/v1/chat/completions" -> ("https://host:port", "/v1/chat/completions")
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("endpoint_url must start with http:// or https://");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/v1/chat/completions"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

HttpBackend::HttpBackend(const BackendConfig& config)
    : api_key_env_(config.api_key_env), timeout_ms_(config.timeout_ms) {
    if (!config.endpoint_url) throw ConfigError("http backend requires endpoint_url");
    std::tie(base_url_, path_) = split_url(*config.endpoint_url);
#ifndef FAIRMONITOR_HAVE_OPENSSL
    if (base_url_.rfind("https://", 0) == 0)
        throw ConfigError("this build has no TLS support; use an http:// endpoint");
#endif
}

HttpBackend::~HttpBackend() = default;

BackendReply HttpBackend::send(const ChatRequest& request) {
    using K = GatewayError::Kind;
    const char* key = std::getenv(api_key_env_.c_str());
    if (key == nullptr || *key == '\0')
        throw GatewayError(K::Auth, "environment variable '" + api_key_env_ + "' is not set");

    json body;
    body["model"] = request.model_id;
    body["messages"] = json::array();
    for (const auto& m : request.messages)
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    body["temperature"] = request.params.temperature;
    body["top_p"] = request.params.top_p;
    body["max_tokens"] = request.params.max_tokens;
    if (request.params.seed) body["seed"] = *request.params.seed;

    httplib::Client client(base_url_);
    const auto secs = timeout_ms_ / 1000;
    const auto usecs = (timeout_ms_ % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
            throw GatewayError(K::Timeout, "request timed out: " + httplib::to_string(err));
        throw GatewayError(K::Transport, "transport failure: " + httplib::to_string(err));
    }
    const int status = res->status;
    if (status == 401 || status == 403)
        throw GatewayError(K::Auth, "authentication failed (HTTP " + std::to_string(status) + ")");
    if (status == 429) throw GatewayError(K::RateLimited, "rate limited (HTTP 429)");
    if (status < 200 || status >= 300) {
        GatewayError e(K::Http, "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
        e.set_transient_http(status >= 500);
        throw e;
    }

    BackendReply reply;
    try {
        const auto j = json::parse(res->body);
        reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (auto u = j.find("usage"); u != j.end() && u->is_object())
            reply.usage = TokenUsage{u->value("prompt_tokens", std::int64_t{0}),
                                     u->value("completion_tokens", std::int64_t{0})};
    } catch (const json::exception& e) {
        throw GatewayError(K::Http, std::string("unexpected response body: ") + e.what());
    }
    return reply;
}

} // namespace fairmonitor
