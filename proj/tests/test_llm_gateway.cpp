// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <meditool/error.hpp>
#include <meditool/llm_gateway.hpp>

#include <catch_amalgamated.hpp>
#include <httplib.h>

#include <atomic>
#include <thread>

using namespace meditool;
using namespace meditool::llm;
using nlohmann::json;

namespace
{

ErrorCode code_of(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const Error& e)
    {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::InvalidArgument;
}

CompletionRequest request(std::string user)
{
    auto r = CompletionRequest {};
    r.system_prompt = "system";
    r.conversation.push_back({ Role::User, std::move(user) });
    r.stop_sequences = { "Observation:" };
    return r;
}

/// Chat endpoint on an ephemeral local port that answers from a queue of (status, body) pairs.
class StubServer
{
  public:
    explicit StubServer(std::vector<std::pair<int, std::string>> replies): _replies(std::move(replies))
    {
        _server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(_mutex);
            _requests.push_back(req.body);
            _authorization.push_back(req.get_header_value("Authorization"));
            auto const [status, body] = _next < _replies.size() ? _replies[_next++] : std::pair { 500, std::string {} };
            res.status = status;
            res.set_content(body, "application/json");
        });
        _port = _server.bind_to_any_port("127.0.0.1");
        _thread = std::thread([this] { _server.listen_after_bind(); });
        _server.wait_until_ready();
    }
    ~StubServer()
    {
        _server.stop();
        _thread.join();
    }

    [[nodiscard]] std::string endpoint() const
    {
        return "http://127.0.0.1:" + std::to_string(_port) + "/v1/chat/completions";
    }
    [[nodiscard]] std::size_t hits() const
    {
        std::lock_guard lock(_mutex);
        return _requests.size();
    }
    [[nodiscard]] std::vector<std::string> authorization() const
    {
        std::lock_guard lock(_mutex);
        return _authorization;
    }
    [[nodiscard]] std::vector<std::string> bodies() const
    {
        std::lock_guard lock(_mutex);
        return _requests;
    }

  private:
    httplib::Server _server;
    std::thread _thread;
    int _port = 0;
    mutable std::mutex _mutex;
    std::vector<std::pair<int, std::string>> _replies;
    std::size_t _next = 0;
    std::vector<std::string> _requests;
    std::vector<std::string> _authorization;
};

std::string chat_reply(const std::string& content)
{
    return json { { "choices", json::array({ { { "message", { { "role", "assistant" }, { "content", content } } } } }) } }
        .dump();
}

HttpChatConfig config_for(const StubServer& stub)
{
    auto c = HttpChatConfig {};
    c.endpoint = stub.endpoint();
    c.model = "stub-model";
    c.api_key = "sk-test-SECRET-0123456789";
    c.timeout = std::chrono::seconds(10);
    c.base_backoff = std::chrono::milliseconds(100);
    return c;
}

} // namespace

TEST_CASE("scripted backend runs out", "[llm_gateway]")
{
    auto backend = ScriptedBackend(std::vector<std::string> { "Final Answer: hi" });
    CHECK(backend.complete(request("q")) == "Final Answer: hi");
    CHECK(code_of([&] { (void)backend.complete(request("q")); }) == ErrorCode::ScriptExhausted);
    CHECK(backend.calls() == 2);
    CHECK(backend.remaining() == 0);
}

TEST_CASE("scripted rules match the latest user message", "[llm_gateway]")
{
    auto backend = ScriptedBackend::from_json(json::parse(R"([
        {"user_contains": "diabetes", "completion": "D"},
        {"call_index": 1, "completion": "second"},
        {"completion": "fallback"}
    ])"));
    CHECK(backend->complete(request("what about cvd")) == "fallback");
    CHECK(backend->complete(request("x")) == "second");
    CHECK(backend->complete(request("diabetes please")) == "D");
    CHECK(code_of([&] { (void)backend->complete(request("diabetes")); }) == ErrorCode::ScriptExhausted);
}

TEST_CASE("request digests are stable and content-sensitive", "[llm_gateway]")
{
    auto const a = request("q");
    CHECK(request_digest(a) == request_digest(request("q")));
    CHECK(request_digest(a).size() == 64);
    CHECK(request_digest(a) != request_digest(request("q ")));
    auto b = a;
    b.decoding.temperature = 0.5;
    CHECK(request_digest(a) != request_digest(b));
}

TEST_CASE("stop sequences cut at the earliest match", "[llm_gateway]")
{
    auto const stops = std::vector<std::string> { "Observation:", "STOP" };
    CHECK(truncate_at_stop("abc STOP def Observation: x", stops) == "abc ");
    CHECK(truncate_at_stop("no markers", stops) == "no markers");
    CHECK(truncate_at_stop("Observation:", stops).empty());
}

TEST_CASE("record then replay", "[llm_gateway]")
{
    auto dir = support::TempDir {};
    auto const fixture = dir.path() / "session.jsonl";
    auto live = std::make_shared<ScriptedBackend>(std::vector<std::string> { "Final Answer: one", "Final Answer: two" });
    auto recorder = record_session(live, fixture);
    CHECK(recorder->complete(request("first")) == "Final Answer: one");
    CHECK(recorder->complete(request("first")) == "Final Answer: two");

    auto replay = ReplayBackend(fixture);
    CHECK(replay.complete(request("first")) == "Final Answer: one");
    CHECK(replay.complete(request("first")) == "Final Answer: two");
    CHECK(code_of([&] { (void)replay.complete(request("first")); }) == ErrorCode::ReplayMiss);

    auto fresh = ReplayBackend(fixture);
    CHECK(code_of([&] { (void)fresh.complete(request("mutated")); }) == ErrorCode::ReplayMiss);
    CHECK(code_of([&] { ReplayBackend(dir.path() / "absent.jsonl"); }) == ErrorCode::ConfigError);
}

TEST_CASE("live backend truncates at the stop sequence and keeps the key out of fixtures", "[llm_gateway]")
{
    auto stub = StubServer({ { 200, chat_reply("Thought: t\nAction: cvd_risk\nAction Input: {}\nObservation: {\"x\": 1}") } });
    auto const config = config_for(stub);
    auto live = std::make_shared<HttpChatBackend>(config, [](std::chrono::milliseconds) {});
    auto dir = support::TempDir {};
    auto const fixture = dir.path() / "live.jsonl";
    auto gateway = Gateway(record_session(live, fixture));

    auto const text = gateway.complete(request("q"));
    CHECK(text == "Thought: t\nAction: cvd_risk\nAction Input: {}\n");
    REQUIRE(stub.hits() == 1);
    CHECK(stub.authorization()[0] == "Bearer " + config.api_key);
    auto const sent = json::parse(stub.bodies()[0]);
    CHECK(sent["model"] == "stub-model");
    CHECK(sent["stop"] == json::array({ "Observation:" }));
    CHECK(sent["messages"][0]["role"] == "system");

    auto const recorded = support::read_text(fixture);
    CHECK_FALSE(recorded.empty());
    CHECK(recorded.find(config.api_key) == std::string::npos);
    CHECK(recorded.find("SECRET") == std::string::npos);
    CHECK(live->wire_body(request("q")).dump().find("SECRET") == std::string::npos);
}

TEST_CASE("live backend retries transient failures with backoff", "[llm_gateway]")
{
    auto stub = StubServer({ { 503, "" }, { 429, "" }, { 200, chat_reply("Final Answer: ok") } });
    auto sleeps = std::vector<std::chrono::milliseconds> {};
    auto backend = HttpChatBackend(config_for(stub), [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    CHECK(backend.complete(request("q")) == "Final Answer: ok");
    CHECK(stub.hits() == 3);
    CHECK(sleeps == std::vector<std::chrono::milliseconds> { std::chrono::milliseconds(100), std::chrono::milliseconds(200) });
}

TEST_CASE("live backend gives up after the attempt budget", "[llm_gateway]")
{
    auto stub = StubServer({ { 500, "" }, { 502, "" }, { 503, "" }, { 200, chat_reply("late") } });
    auto backend = HttpChatBackend(config_for(stub), [](std::chrono::milliseconds) {});
    try
    {
        (void)backend.complete(request("q"));
        FAIL("expected failure");
    }
    catch (const Error& e)
    {
        CHECK(e.code() == ErrorCode::BackendUnavailable);
        CHECK(e.details().size() == 3);
        for (const auto& d: e.details())
            CHECK(d.find("SECRET") == std::string::npos);
    }
    CHECK(stub.hits() == 3);
}

TEST_CASE("client errors are not retried", "[llm_gateway]")
{
    auto stub = StubServer({ { 401, "{\"error\": \"bad key\"}" }, { 200, chat_reply("never") } });
    auto sleeps = 0;
    auto backend = HttpChatBackend(config_for(stub), [&](std::chrono::milliseconds) { ++sleeps; });
    CHECK(code_of([&] { (void)backend.complete(request("q")); }) == ErrorCode::BackendUnavailable);
    CHECK(stub.hits() == 1);
    CHECK(sleeps == 0);
}

TEST_CASE("unreachable endpoint is BackendUnavailable", "[llm_gateway]")
{
    auto config = HttpChatConfig {};
    config.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    config.max_attempts = 2;
    config.timeout = std::chrono::seconds(5);
    auto backend = HttpChatBackend(config, [](std::chrono::milliseconds) {});
    CHECK(code_of([&] { (void)backend.complete(request("q")); }) == ErrorCode::BackendUnavailable);
}

namespace
{

class SlowBackend: public Backend
{
  public:
    std::string complete(const CompletionRequest&) override
    {
        auto const now = ++_active;
        auto seen = _peak.load();
        while (now > seen && !_peak.compare_exchange_weak(seen, now))
        {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --_active;
        return "Final Answer: ok";
    }
    [[nodiscard]] std::string_view name() const noexcept override { return "slow"; }
    [[nodiscard]] int peak() const { return _peak; }

  private:
    std::atomic<int> _active { 0 };
    std::atomic<int> _peak { 0 };
};

} // namespace

TEST_CASE("gateway bounds concurrent requests", "[llm_gateway]")
{
    auto backend = std::make_shared<SlowBackend>();
    auto gateway = Gateway(backend, 2);
    auto threads = std::vector<std::thread> {};
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&] { (void)gateway.complete(request("q")); });
    for (auto& t: threads)
        t.join();
    CHECK(backend->peak() <= 2);
    CHECK(backend->peak() >= 1);
}
