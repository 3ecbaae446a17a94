#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "fairmonitor/error.h"
#include "fairmonitor/gateway.h"
#include "support/helpers.h"

using namespace fairmonitor;

namespace {

ChatRequest user_request(std::string text, std::string model = "m", std::optional<std::uint64_t> seed = {}) {
    ChatRequest r;
    r.model_id = std::move(model);
    r.messages = {{"user", std::move(text)}};
    r.params.seed = seed;
    return r;
}

/// Local OpenAI-style stub that replies with a scripted status sequence.
class StubServer {
public:
    explicit StubServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mu_);
            auth_ = req.get_header_value("Authorization");
            last_body_ = req.body;
            const int status = hits_ < statuses_.size() ? statuses_[hits_] : 200;
            ++hits_;
            res.status = status;
            if (status == 200)
                res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"stub answer"}}],)"
                                R"("usage":{"prompt_tokens":5,"completion_tokens":2}})",
                                "application/json");
            else
                res.set_content(R"({"error":"scripted"})", "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    std::size_t hits() {
        std::lock_guard lock(mu_);
        return hits_;
    }
    std::string auth() {
        std::lock_guard lock(mu_);
        return auth_;
    }
    std::string last_body() {
        std::lock_guard lock(mu_);
        return last_body_;
    }

private:
    httplib::Server server_;
    std::vector<int> statuses_;
    std::mutex mu_;
    std::size_t hits_ = 0;
    std::string auth_, last_body_;
    int port_ = 0;
    std::thread thread_;
};

std::shared_ptr<Gateway> http_gateway(const std::string& url) {
    BackendConfig cfg;
    cfg.kind = BackendKind::HttpOpenAIStyle;
    cfg.endpoint_url = url;
    cfg.api_key_env = "FM_TEST_API_KEY";
    cfg.retry = {3, 5};
    cfg.timeout_ms = 5000;
    return Gateway::create(cfg);
}

} // namespace

TEST_CASE("mock rule lookup returns the scripted text") {
    MockFixture f;
    f.add_rule("class committee", "I vote for candidate A.");
    auto m = fmtest::make_mock(f);
    const auto r = m.gateway->complete(user_request("Welcome to the class committee election."));
    CHECK(r.text == "I vote for candidate A.");
    CHECK(r.model_id == "m");
    CHECK(r.attempts == 1);
    CHECK(m.backend->call_count() == 1);
}

TEST_CASE("first matching rule wins; model filter and regex") {
    auto f = MockFixture::parse(
        R"({"contains":"vote","model":"other","response":"filtered"})"
        "\n"
        R"({"regex":"vo+te","response":"regex hit"})"
        "\n"
        R"({"contains":"vote","response":"too late"})"
        "\n");
    auto m = fmtest::make_mock(f);
    CHECK(m.gateway->complete(user_request("please vote")).text == "regex hit");
    CHECK(m.gateway->complete(user_request("please vote", "other")).text == "filtered");
}

TEST_CASE("echo_hash is a pure function of content and seed") {
    auto m = fmtest::make_mock(MockFixture{});
    const auto a = m.gateway->complete(user_request("hello", "m", 7)).text;
    const auto b = m.gateway->complete(user_request("hello", "m", 7)).text;
    const auto c = m.gateway->complete(user_request("hello", "m", 8)).text;
    const auto d = m.gateway->complete(user_request("hello!", "m", 7)).text;
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a != d);
    CHECK(a.rfind("mock reply ", 0) == 0);
    CHECK(MockBackend::echo_hash(user_request("hello", "m", 7)) == a);
}

TEST_CASE("hash token expands deterministically") {
    MockFixture f;
    f.add_rule("x", "id {{hash}} and {{hash}}");
    auto m = fmtest::make_mock(f);
    const auto t = m.gateway->complete(user_request("x", "m", 1)).text;
    REQUIRE(t.size() == std::string("id ").size() + 8 + 5 + 8);
    CHECK(t.substr(3, 8) == t.substr(16, 8));
    CHECK(m.gateway->complete(user_request("x", "m", 1)).text == t);
    CHECK(m.gateway->complete(user_request("x", "m", 2)).text != t);
}

TEST_CASE("fail mode names the prompt prefix") {
    auto f = MockFixture::parse(R"({"default_mode":"fail"})");
    auto m = fmtest::make_mock(f);
    const std::string prompt(120, 'z');
    try {
        m.gateway->complete(user_request(prompt));
        FAIL("expected an error");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::Unmatched);
        CHECK(std::string(e.what()) == "unmatched prompt: " + std::string(80, 'z'));
        CHECK_FALSE(e.transient());
    }
}

TEST_CASE("fixture parse errors") {
    CHECK_THROWS_AS(MockFixture::parse("{not json"), ConfigError);
    CHECK_THROWS_AS(MockFixture::parse(R"({"response":"x"})"), ConfigError);
    CHECK_THROWS_AS(MockFixture::parse(R"({"contains":"x"})"), ConfigError);
    CHECK_THROWS_AS(MockFixture::parse(R"({"regex":"(","response":"x"})"), ConfigError);
    CHECK_THROWS_AS(MockFixture::parse(R"({"default_mode":"maybe"})"), ConfigError);
}

TEST_CASE("request validation") {
    ChatRequest r;
    r.model_id = "m";
    CHECK_THROWS_AS(r.validate(), GatewayError);
    r.messages = {{"system", "s"}};
    CHECK_THROWS_AS(r.validate(), GatewayError);
    r.messages = {{"system", "s"}, {"user", "u"}, {"assistant", "a"}, {"user", "u2"}};
    CHECK_NOTHROW(r.validate());
    r.messages = {{"user", "u"}, {"user", "u2"}};
    CHECK_THROWS_AS(r.validate(), GatewayError);
    r.messages = {{"tool", "u"}};
    CHECK_THROWS_AS(r.validate(), GatewayError);
    r.messages = {{"user", "u"}};
    r.model_id.clear();
    CHECK_THROWS_AS(r.validate(), GatewayError);
}

TEST_CASE("backend config validation and parsing") {
    BackendConfig c;
    c.kind = BackendKind::HttpOpenAIStyle;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.endpoint_url = "http://localhost:1/v1/chat/completions";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.api_key_env = "KEY";
    CHECK_NOTHROW(c.validate());
    BackendConfig mock;
    CHECK_THROWS_AS(mock.validate(), ConfigError);
    mock.echo = true;
    CHECK_NOTHROW(mock.validate());

    const auto j = json::parse(R"({"backend":{"kind":"mock","fixture":"f.jsonl","max_in_flight":3,
        "rate_limit_per_min":60,"retry":{"max_attempts":5,"base_backoff_ms":10}}})");
    const auto parsed = BackendConfig::from_json(j, "/base");
    CHECK(parsed.kind == BackendKind::Mock);
    CHECK(parsed.fixture_path == std::filesystem::path("/base/f.jsonl"));
    CHECK(parsed.max_in_flight == 3);
    CHECK(parsed.rate_limit_per_min == 60);
    CHECK(parsed.retry.max_attempts == 5);
    CHECK_THROWS_AS(BackendConfig::from_json(json::parse(R"({"kind":"carrier pigeon"})")), ConfigError);
}

TEST_CASE("complete_batch keeps order and bounds concurrency") {
    MockFixture f;
    f.add_regex_rule("^item ([0-9]+)$", {"answer {{hash}}"});
    auto m = fmtest::make_mock(f, 8, 2);
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 100; ++i) {
        reqs.push_back(user_request("item " + std::to_string(i)));
        reqs.back().case_id = "c" + std::to_string(i);
    }
    std::atomic<int> callbacks{0};
    const auto out = m.gateway->complete_batch(reqs, [&](std::size_t, const Gateway::Outcome&) { ++callbacks; });
    REQUIRE(out.size() == 100);
    for (std::size_t i = 0; i < out.size(); ++i) {
        REQUIRE(out[i].ok());
        CHECK(out[i].response->case_id == "c" + std::to_string(i));
        CHECK(out[i].response->text == m.backend->send(reqs[i]).text);
    }
    CHECK(callbacks == 100);
    CHECK(m.backend->in_flight_high_water() <= 8);
    CHECK(m.backend->in_flight_high_water() >= 2);
}

TEST_CASE("empty batch") {
    auto m = fmtest::make_mock(MockFixture{});
    CHECK(m.gateway->complete_batch({}).empty());
    CHECK(m.backend->call_count() == 0);
}

TEST_CASE("one failing slot does not abort the batch") {
    MockFixture f;
    f.add_error_rule("poison", "scripted failure");
    auto m = fmtest::make_mock(f, 4);
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 100; ++i) reqs.push_back(user_request(i == 37 ? "poison pill" : "fine " + std::to_string(i)));
    const auto out = m.gateway->complete_batch(reqs);
    std::size_t ok = 0;
    for (const auto& o : out) ok += o.ok();
    CHECK(ok == 99);
    CHECK_FALSE(out[37].ok());
    CHECK(out[37].error == "scripted failure");
}

TEST_CASE("sliding-window limiter never exceeds the cap") {
    BackendConfig cfg;
    cfg.echo = true;
    cfg.max_in_flight = 8;
    cfg.rate_limit_per_min = 5;
    auto backend = std::make_shared<MockBackend>(MockFixture{});
    Gateway g(cfg, backend);
    const auto window = std::chrono::milliseconds(150);
    g.set_rate_window(window);

    std::mutex mu;
    std::vector<std::chrono::steady_clock::time_point> stamps;
    std::vector<ChatRequest> reqs(15, user_request("tick"));
    const auto start = std::chrono::steady_clock::now();
    g.complete_batch(reqs, [&](std::size_t, const Gateway::Outcome&) {
        std::lock_guard lock(mu);
        stamps.push_back(std::chrono::steady_clock::now());
    });
    const auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(elapsed >= 2 * window);
    std::sort(stamps.begin(), stamps.end());
    // issuance precedes completion, so any 5 + 1 consecutive completions span
    // at least one window minus scheduling slack
    for (std::size_t i = 5; i < stamps.size(); ++i)
        CHECK(stamps[i] - stamps[i - 5] >= window - std::chrono::milliseconds(20));
}

TEST_CASE("http backend retries 429 then succeeds") {
    ::setenv("FM_TEST_API_KEY", "secret-key", 1);
    StubServer server({429, 429, 200});
    auto g = http_gateway(server.url());
    auto req = user_request("hello", "gpt-test", 42);
    const auto r = g->complete(req);
    CHECK(r.text == "stub answer");
    CHECK(r.attempts == 3);
    CHECK(server.hits() == 3);
    CHECK(server.auth() == "Bearer secret-key");
    REQUIRE(r.token_usage);
    CHECK(r.token_usage->prompt == 5);
    const auto body = json::parse(server.last_body());
    CHECK(body.at("model") == "gpt-test");
    CHECK(body.at("seed") == 42);
    CHECK(body.at("top_p") == 0.9);
}

TEST_CASE("http auth failure surfaces immediately") {
    ::setenv("FM_TEST_API_KEY", "secret-key", 1);
    StubServer server({401, 200});
    auto g = http_gateway(server.url());
    CHECK_THROWS_AS(g->complete(user_request("hello")), GatewayError);
    CHECK(server.hits() == 1);
}

TEST_CASE("http retries exhaust on persistent 5xx") {
    ::setenv("FM_TEST_API_KEY", "secret-key", 1);
    StubServer server({503, 503, 503, 200});
    auto g = http_gateway(server.url());
    CHECK_THROWS_AS(g->complete(user_request("hello")), GatewayError);
    CHECK(server.hits() == 3);
}

TEST_CASE("http 400 is not retried and missing key is an auth error") {
    ::setenv("FM_TEST_API_KEY", "secret-key", 1);
    StubServer server({400, 200});
    auto g = http_gateway(server.url());
    CHECK_THROWS_AS(g->complete(user_request("hello")), GatewayError);
    CHECK(server.hits() == 1);
    ::unsetenv("FM_TEST_API_KEY");
    try {
        g->complete(user_request("hello"));
        FAIL("expected auth error");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::Auth);
    }
    CHECK(server.hits() == 1);
}
