#include "fairmonitor/gateway.h"

#include <algorithm>
#include <thread>

#include <spdlog/spdlog.h>

#include "fairmonitor/util.h"

namespace fairmonitor {

// ---------------------------------------------------------------------------
// ChatRequest
// ---------------------------------------------------------------------------

void ChatRequest::validate() const {
    using K = GatewayError::Kind;
    if (model_id.empty()) throw GatewayError(K::InvalidRequest, "request has no model_id");
    if (messages.empty()) throw GatewayError(K::InvalidRequest, "request has no messages");
    std::size_t i = 0;
    if (messages[0].role == "system") i = 1;
    if (i == messages.size()) throw GatewayError(K::InvalidRequest, "request has only a system message");
    std::string expected = "user";
    for (; i < messages.size(); ++i) {
        const auto& role = messages[i].role;
        if (role != "user" && role != "assistant")
            throw GatewayError(K::InvalidRequest, "invalid message role '" + role + "'");
        if (role != expected)
            throw GatewayError(K::InvalidRequest,
                               "message roles must alternate user/assistant after the system prefix");
        expected = expected == "user" ? "assistant" : "user";
    }
    params.validate();
}

std::string ChatRequest::prompt_text() const {
    std::string out;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        if (i) out += '\n';
        out += messages[i].content;
    }
    return out;
}

// ---------------------------------------------------------------------------
// BackendConfig
// ---------------------------------------------------------------------------

void BackendConfig::validate() const {
    if (max_in_flight <= 0) throw ConfigError("max_in_flight must be positive");
    if (rate_limit_per_min <= 0) throw ConfigError("rate_limit_per_min must be positive");
    if (retry.max_attempts <= 0) throw ConfigError("retry.max_attempts must be positive");
    if (retry.base_backoff_ms < 0) throw ConfigError("retry.base_backoff_ms must be >= 0");
    if (timeout_ms <= 0) throw ConfigError("timeout_ms must be positive");
    if (kind == BackendKind::HttpOpenAIStyle) {
        if (!endpoint_url || endpoint_url->empty())
            throw ConfigError("http backend requires endpoint_url");
        if (api_key_env.empty()) throw ConfigError("http backend requires api_key_env");
    } else if (!fixture_path && !echo) {
        throw ConfigError("mock backend requires a fixture path or echo mode");
    }
}

BackendConfig BackendConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    BackendConfig c;
    const json& b = j.contains("backend") ? j.at("backend") : j;
    try {
        const auto kind = b.value("kind", std::string("mock"));
        if (kind == "mock") c.kind = BackendKind::Mock;
        else if (kind == "http_openai_style" || kind == "http") c.kind = BackendKind::HttpOpenAIStyle;
        else throw ConfigError("unknown backend kind '" + kind + "'");
        if (b.contains("endpoint_url")) c.endpoint_url = b.at("endpoint_url").get<std::string>();
        c.api_key_env = b.value("api_key_env", std::string{});
        c.max_in_flight = b.value("max_in_flight", c.max_in_flight);
        c.rate_limit_per_min = b.value("rate_limit_per_min", c.rate_limit_per_min);
        c.timeout_ms = b.value("timeout_ms", c.timeout_ms);
        if (b.contains("retry")) {
            const auto& r = b.at("retry");
            c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
            c.retry.base_backoff_ms = r.value("base_backoff_ms", c.retry.base_backoff_ms);
        }
        if (b.contains("fixture")) {
            std::filesystem::path p = b.at("fixture").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            c.fixture_path = p;
        }
        c.echo = b.value("echo", c.echo);
        c.mock_delay_ms = b.value("delay_ms", c.mock_delay_ms);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid backend config: ") + e.what());
    }
    c.validate();
    return c;
}

ordered_json BackendConfig::to_json() const {
    ordered_json j;
    j["kind"] = kind == BackendKind::Mock ? "mock" : "http_openai_style";
    if (endpoint_url) j["endpoint_url"] = *endpoint_url;
    if (!api_key_env.empty()) j["api_key_env"] = api_key_env;
    j["max_in_flight"] = max_in_flight;
    j["rate_limit_per_min"] = rate_limit_per_min;
    j["timeout_ms"] = timeout_ms;
    j["retry"] = {{"max_attempts", retry.max_attempts}, {"base_backoff_ms", retry.base_backoff_ms}};
    if (fixture_path) j["fixture"] = fixture_path->generic_string();
    if (echo) j["echo"] = true;
    if (mock_delay_ms) j["delay_ms"] = mock_delay_ms;
    return j;
}

// ---------------------------------------------------------------------------
// Mock
// ---------------------------------------------------------------------------

bool MockRule::matches(const ChatRequest& request, const std::string& prompt) const {
    if (model_id && *model_id != request.model_id) return false;
    if (match == Match::Substring) return prompt.find(pattern) != std::string::npos;
    return regex_ && std::regex_search(prompt, *regex_);
}

MockFixture MockFixture::parse(std::string_view jsonl) {
    MockFixture f;
    const auto lines = util::split_lines(jsonl);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto at = " at fixture line " + std::to_string(i + 1);
        if (util::trim(lines[i]).empty()) continue;
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::parse_error&) {
            throw ConfigError("malformed JSON" + at);
        }
        if (!j.is_object()) throw ConfigError("fixture record is not an object" + at);
        if (j.contains("default_mode")) {
            const auto mode = j.at("default_mode").get<std::string>();
            if (mode == "echo_hash") f.default_mode = DefaultMode::EchoHash;
            else if (mode == "fail") f.default_mode = DefaultMode::Fail;
            else throw ConfigError("unknown default_mode '" + mode + "'" + at);
            continue;
        }
        MockRule r;
        if (j.contains("contains")) {
            r.match = MockRule::Match::Substring;
            r.pattern = j.at("contains").get<std::string>();
        } else if (j.contains("regex")) {
            r.match = MockRule::Match::Regex;
            r.pattern = j.at("regex").get<std::string>();
            try {
                r.regex_ = std::make_shared<const std::regex>(r.pattern);
            } catch (const std::regex_error&) {
                throw ConfigError("invalid regex" + at);
            }
        } else {
            throw ConfigError("rule needs 'contains' or 'regex'" + at);
        }
        if (j.contains("model")) r.model_id = j.at("model").get<std::string>();
        if (j.contains("response")) r.responses.push_back(j.at("response").get<std::string>());
        if (j.contains("responses"))
            for (const auto& x : j.at("responses")) r.responses.push_back(x.get<std::string>());
        if (j.contains("error")) r.error = j.at("error").get<std::string>();
        if (r.responses.empty() && !r.error)
            throw ConfigError("rule needs 'response', 'responses' or 'error'" + at);
        f.rules.push_back(std::move(r));
    }
    return f;
}

MockFixture MockFixture::load(const std::filesystem::path& path) {
    std::string text;
    try {
        text = util::read_file(path);
    } catch (const Error&) {
        throw ConfigError("cannot read mock fixture '" + path.string() + "'");
    }
    return parse(text);
}

MockFixture& MockFixture::add_rule(std::string contains, std::string response) {
    MockRule r;
    r.pattern = std::move(contains);
    r.responses.push_back(std::move(response));
    rules.push_back(std::move(r));
    return *this;
}

MockFixture& MockFixture::add_regex_rule(const std::string& regex, std::vector<std::string> responses) {
    MockRule r;
    r.match = MockRule::Match::Regex;
    r.pattern = regex;
    r.regex_ = std::make_shared<const std::regex>(regex);
    r.responses = std::move(responses);
    rules.push_back(std::move(r));
    return *this;
}

MockFixture& MockFixture::add_error_rule(std::string contains, std::string error) {
    MockRule r;
    r.pattern = std::move(contains);
    r.error = std::move(error);
    rules.push_back(std::move(r));
    return *this;
}

MockBackend::MockBackend(MockFixture fixture, std::chrono::milliseconds delay)
    : fixture_(std::move(fixture)), delay_(delay) {}

void MockBackend::reset_counters() {
    calls_ = 0;
    high_water_ = 0;
}

namespace {

std::uint64_t request_hash(const ChatRequest& request) {
    std::uint64_t h = util::fnv1a64(request.model_id);
    for (const auto& m : request.messages) {
        h = util::fnv1a64("\x1f", h);
        h = util::fnv1a64(m.role, h);
        h = util::fnv1a64("\x1e", h);
        h = util::fnv1a64(m.content, h);
    }
    h = util::fnv1a64("\x1d" + std::to_string(request.params.seed.value_or(0)), h);
    return h;
}

std::string expand_hash(std::string text, std::uint64_t h) {
    static constexpr std::string_view kToken = "{{hash}}";
    const auto short_hash = util::hex64(h).substr(0, 8);
    for (auto pos = text.find(kToken); pos != std::string::npos; pos = text.find(kToken, pos))
        text.replace(pos, kToken.size(), short_hash);
    return text;
}

} // namespace

std::string MockBackend::echo_hash(const ChatRequest& request) {
    return "mock reply " + util::hex64(request_hash(request));
}

BackendReply MockBackend::send(const ChatRequest& request) {
    ++calls_;
    const auto now = ++in_flight_;
    auto hw = high_water_.load();
    while (now > hw && !high_water_.compare_exchange_weak(hw, now)) {
    }
    struct Leave {
        std::atomic<std::size_t>& n;
        ~Leave() { --n; }
    } leave{in_flight_};

    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);

    const auto prompt = request.prompt_text();
    const auto h = request_hash(request);
    for (const auto& rule : fixture_.rules) {
        if (!rule.matches(request, prompt)) continue;
        if (rule.error) throw GatewayError(GatewayError::Kind::Scripted, *rule.error);
        const auto& text = rule.responses[h % rule.responses.size()];
        return {expand_hash(text, util::splitmix64(h)), TokenUsage{static_cast<std::int64_t>(prompt.size() / 4),
                                                        static_cast<std::int64_t>(text.size() / 4)}};
    }
    if (fixture_.default_mode == MockFixture::DefaultMode::Fail)
        throw GatewayError(GatewayError::Kind::Unmatched,
                           "unmatched prompt: " + prompt.substr(0, 80));
    return {echo_hash(request), std::nullopt};
}

// ---------------------------------------------------------------------------
// Rate limiting
// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(int max_per_window, std::chrono::milliseconds window)
    : max_(max_per_window), window_(window) {}

void RateLimiter::acquire() {
    using clock = std::chrono::steady_clock;
    std::unique_lock lock(mu_);
    for (;;) {
        const auto now = clock::now();
        while (!issued_.empty() && now - issued_.front() >= window_) issued_.pop_front();
        if (static_cast<int>(issued_.size()) < max_) {
            issued_.push_back(now);
            return;
        }
        const auto wake = issued_.front() + window_;
        lock.unlock();
        std::this_thread::sleep_until(wake);
        lock.lock();
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

Gateway::Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      limiter_(std::make_unique<RateLimiter>(config_.rate_limit_per_min, std::chrono::minutes(1))),
      free_slots_(config_.max_in_flight) {
    if (!backend_) throw ConfigError("gateway needs a backend");
    if (config_.max_in_flight <= 0) throw ConfigError("max_in_flight must be positive");
}

std::shared_ptr<Gateway> Gateway::create(const BackendConfig& config) {
    config.validate();
    std::shared_ptr<ChatBackend> backend;
    if (config.kind == BackendKind::Mock) {
        MockFixture fixture;
        if (config.fixture_path) fixture = MockFixture::load(*config.fixture_path);
        backend = std::make_shared<MockBackend>(std::move(fixture),
                                                std::chrono::milliseconds(config.mock_delay_ms));
    } else {
        backend = std::make_shared<HttpBackend>(config);
    }
    return std::make_shared<Gateway>(config, std::move(backend));
}

void Gateway::set_rate_window(std::chrono::milliseconds window) {
    limiter_ = std::make_unique<RateLimiter>(config_.rate_limit_per_min, window);
}

void Gateway::acquire_slot() {
    std::unique_lock lock(slot_mu_);
    slot_cv_.wait(lock, [&] { return free_slots_ > 0; });
    --free_slots_;
}

void Gateway::release_slot() {
    {
        std::lock_guard lock(slot_mu_);
        ++free_slots_;
    }
    slot_cv_.notify_one();
}

ModelResponse Gateway::complete(const ChatRequest& request) {
    request.validate();
    const auto start = std::chrono::steady_clock::now();
    for (int attempt = 1;; ++attempt) {
        limiter_->acquire();
        acquire_slot();
        try {
            auto reply = backend_->send(request);
            release_slot();
            ModelResponse r;
            r.case_id = request.case_id;
            r.model_id = request.model_id;
            r.text = std::move(reply.text);
            r.token_usage = reply.usage;
            r.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - start)
                               .count();
            r.created_at = util::utc_now_iso();
            r.attempts = attempt;
            if (attempt > 1)
                spdlog::info("request for '{}' succeeded after {} attempts", request.case_id, attempt);
            return r;
        } catch (const GatewayError& e) {
            release_slot();
            if (!e.transient() || attempt >= config_.retry.max_attempts) {
                if (e.transient())
                    spdlog::warn("giving up on '{}' after {} attempts: {}", request.case_id, attempt,
                                 e.what());
                throw;
            }
            const auto backoff = std::chrono::milliseconds(
                static_cast<long long>(config_.retry.base_backoff_ms) << (attempt - 1));
            spdlog::debug("attempt {} for '{}' failed ({}), retrying in {} ms", attempt,
                          request.case_id, e.what(), backoff.count());
            std::this_thread::sleep_for(backoff);
        } catch (...) {
            release_slot();
            throw;
        }
    }
}

std::vector<Gateway::Outcome> Gateway::complete_batch(const std::vector<ChatRequest>& requests,
                                                      const Callback& on_done) {
    std::vector<Outcome> out(requests.size());
    util::parallel_for(requests.size(), max_in_flight(), [&](std::size_t i) {
        Outcome o;
        try {
            o.response = complete(requests[i]);
        } catch (const Error& e) {
            o.error = e.what();
        }
        if (on_done) on_done(i, o);
        out[i] = std::move(o);
    });
    return out;
}

} // namespace fairmonitor
