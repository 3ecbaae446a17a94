#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "fairmonitor/core.h"
#include "fairmonitor/error.h"

namespace fairmonitor {

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    SamplingParams params;
    /// Carried into ModelResponse::case_id; not sent to the provider.
    std::string case_id;

    /// Throws GatewayError(InvalidRequest) on an empty message list, an unknown
    /// role, or roles that do not alternate after the optional system prefix.
    void validate() const;
    /// Message contents joined by '\n'; what mock matchers see.
    std::string prompt_text() const;
};

class GatewayError : public Error {
public:
    enum class Kind { InvalidRequest, Auth, RateLimited, Timeout, Transport, Http, Unmatched, Scripted };

    GatewayError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }
    /// Whether the retry policy may try again.
    bool transient() const noexcept {
        return kind_ == Kind::RateLimited || kind_ == Kind::Timeout || kind_ == Kind::Transport ||
               transient_http_;
    }
    void set_transient_http(bool v) noexcept { transient_http_ = v; }

private:
    Kind kind_;
    bool transient_http_ = false;
};

struct RetryPolicy {
    int max_attempts = 3;
    int base_backoff_ms = 500;
};

enum class BackendKind { HttpOpenAIStyle, Mock };

struct BackendConfig {
    BackendKind kind = BackendKind::Mock;
    std::optional<std::string> endpoint_url;
    std::string api_key_env;
    int max_in_flight = 4;
    int rate_limit_per_min = 600;
    RetryPolicy retry;
    int timeout_ms = 60000;
    // mock only
    std::optional<std::filesystem::path> fixture_path;
    bool echo = false;
    int mock_delay_ms = 0;

    /// Throws ConfigError describing the first problem found.
    void validate() const;

    /// Reads the `[backend]` table layout (see README). Relative fixture
    /// paths are resolved against `base_dir`.
    static BackendConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
    ordered_json to_json() const;
};

/// Loads a TOML or JSON file (by extension; `.toml` is TOML, everything else
/// JSON) into a JSON value.
json load_config_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

struct BackendReply {
    std::string text;
    std::optional<TokenUsage> usage;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// One attempt. Throws GatewayError; retries are the gateway's business.
    virtual BackendReply send(const ChatRequest& request) = 0;
};

struct MockRule {
    enum class Match { Substring, Regex };

    Match match = Match::Substring;
    std::string pattern;
    std::optional<std::string> model_id;
    /// One of these is chosen per request by a hash of (prompt, seed).
    std::vector<std::string> responses;
    /// When set the rule produces this error instead of a response.
    std::optional<std::string> error;

    bool matches(const ChatRequest& request, const std::string& prompt) const;

private:
    friend struct MockFixture;
    std::shared_ptr<const std::regex> regex_;
};

struct MockFixture {
    enum class DefaultMode { EchoHash, Fail };

    std::vector<MockRule> rules;
    DefaultMode default_mode = DefaultMode::EchoHash;

    /// JSONL; each line is a rule ({"contains"|"regex", "response"|"responses"|"error",
    /// optional "model"}) or a settings line ({"default_mode": "echo_hash"|"fail"}).
    static MockFixture parse(std::string_view jsonl);
    static MockFixture load(const std::filesystem::path& path);

    MockFixture& add_rule(std::string contains, std::string response);
    MockFixture& add_regex_rule(const std::string& regex, std::vector<std::string> responses);
    MockFixture& add_error_rule(std::string contains, std::string error);
};

/// Deterministic offline backend: first matching rule wins, otherwise
/// echo_hash or fail. Instrumented for tests.
class MockBackend : public ChatBackend {
public:
    explicit MockBackend(MockFixture fixture, std::chrono::milliseconds delay = {});

    BackendReply send(const ChatRequest& request) override;

    std::size_t call_count() const noexcept { return calls_.load(); }
    std::size_t in_flight_high_water() const noexcept { return high_water_.load(); }
    void reset_counters();

    /// Pure function of (request content, seed).
    static std::string echo_hash(const ChatRequest& request);

private:
    MockFixture fixture_;
    std::chrono::milliseconds delay_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> high_water_{0};
};

/// OpenAI-style chat-completions over HTTP(S).
class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(const BackendConfig& config);
    ~HttpBackend() override;

    BackendReply send(const ChatRequest& request) override;

private:
    std::string base_url_;
    std::string path_;
    std::string api_key_env_;
    int timeout_ms_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

/// Sliding-window issuance limiter: at most `max_per_window` acquisitions
/// within any `window`-long interval.
class RateLimiter {
public:
    RateLimiter(int max_per_window, std::chrono::milliseconds window);
    void acquire();

private:
    std::mutex mu_;
    int max_;
    std::chrono::milliseconds window_;
    std::deque<std::chrono::steady_clock::time_point> issued_;
};

/// Thread-safe façade every module uses to reach models.
class Gateway {
public:
    struct Outcome {
        std::optional<ModelResponse> response;
        std::string error;

        bool ok() const { return response.has_value(); }
    };

    using Callback = std::function<void(std::size_t index, const Outcome& outcome)>;

    Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend);

    /// Builds the backend the config names.
    static std::shared_ptr<Gateway> create(const BackendConfig& config);

    /// Retries transient failures per the retry policy with exponential
    /// backoff; throws GatewayError otherwise.
    ModelResponse complete(const ChatRequest& request);

    /// Result i corresponds to request i. At most max_in_flight requests are
    /// outstanding at once. `on_done` runs on worker threads as slots finish.
    std::vector<Outcome> complete_batch(const std::vector<ChatRequest>& requests,
                                        const Callback& on_done = {});

    const BackendConfig& config() const noexcept { return config_; }
    ChatBackend& backend() noexcept { return *backend_; }
    std::size_t max_in_flight() const noexcept {
        return static_cast<std::size_t>(config_.max_in_flight);
    }

    /// Test hook; production code never changes the window.
    void set_rate_window(std::chrono::milliseconds window);

private:
    void acquire_slot();
    void release_slot();

    BackendConfig config_;
    std::shared_ptr<ChatBackend> backend_;
    std::unique_ptr<RateLimiter> limiter_;
    std::mutex slot_mu_;
    std::condition_variable slot_cv_;
    int free_slots_;
};

} // namespace fairmonitor
