// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <meditool/error.hpp>
#include <meditool/session_service.hpp>

#include <catch_amalgamated.hpp>
#include <fmt/format.h>

#include <future>
#include <thread>

using namespace meditool;
using namespace meditool::service;
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

/// Blocks every completion until released, so a turn can be held open.
class GateBackend: public llm::Backend
{
  public:
    std::string complete(const llm::CompletionRequest&) override
    {
        _entered.set_value();
        _release.wait();
        return "Final Answer: released";
    }
    [[nodiscard]] std::string_view name() const noexcept override { return "gate"; }

    void wait_entered() { _enteredFuture.wait(); }
    void release() { _releasePromise.set_value(); }

  private:
    std::promise<void> _entered;
    std::future<void> _enteredFuture = _entered.get_future();
    std::promise<void> _releasePromise;
    std::shared_future<void> _release = _releasePromise.get_future().share();
};

} // namespace

TEST_CASE("create, post, sources", "[session_service]")
{
    auto rt = support::scripted_runtime({ support::kCvdCall, "Final Answer: The 10-year CVD risk is 32.5%." });
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const id = svc.create_session();
    CHECK(id == "s0001");
    auto const turn = svc.post_message(id, "What is this patient's CVD risk?");
    CHECK(turn.outcome.status == agent::OutcomeStatus::Completed);
    REQUIRE(turn.grounding.has_value());
    CHECK(turn.grounding->grounded);
    auto const sources = svc.sources(id);
    REQUIRE(sources.size() == 1);
    CHECK(sources[0].tool_name == "cvd_risk");
    CHECK(svc.sources(id, 0).size() == 1);
    CHECK(code_of([&] { (void)svc.sources(id, 3); }) == ErrorCode::InvalidArgument);
    CHECK(svc.grounding(id).grounded);
    CHECK(svc.health()["provenance_records"] == 1);
    CHECK(svc.tools()["tools"].size() == 5);
}

TEST_CASE("unknown sessions", "[session_service]")
{
    auto rt = support::scripted_runtime({});
    auto svc = SessionService(*rt, { counter_ids("s") });
    CHECK(code_of([&] { (void)svc.transcript("nope"); }) == ErrorCode::UnknownSession);
    CHECK(code_of([&] { (void)svc.post_message("nope", "hi"); }) == ErrorCode::UnknownSession);
    CHECK(code_of([&] { svc.close_session("nope"); }) == ErrorCode::UnknownSession);
    auto const id = svc.create_session();
    CHECK(code_of([&] { (void)svc.grounding(id); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("transcript hides thoughts unless debugging", "[session_service]")
{
    auto rt = support::scripted_runtime({ "Thought: secret reasoning\nFinal Answer: hello" });
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const id = svc.create_session();
    svc.post_message(id, "hi");
    auto const plain = svc.transcript(id).dump();
    CHECK(plain.find("secret reasoning") == std::string::npos);
    CHECK(plain.find("hello") != std::string::npos);
    CHECK(plain.find("tool_state") == std::string::npos);
    CHECK(svc.transcript(id, true).dump().find("secret reasoning") != std::string::npos);
}

TEST_CASE("interleaved sessions stay isolated", "[session_service]")
{
    auto script = std::vector<std::string> {
        support::kCvdCall,
        "Final Answer: A one",
        "Action: diabetes_risk\nAction Input: {\"hba1c\": 44, \"glucose\": 6.1, \"sex\": \"male\", \"age\": 62, \"waist\": 108, "
        "\"hip\": 106, \"weight\": 96, \"bmi\": 31.2, \"waist_height_ratio\": 0.62, \"waist_hip_ratio\": 1.02, \"ggt\": 58, "
        "\"cystatin_c\": 0.98, \"crp\": 3.4, \"hdl\": 1.05, \"alt\": 34, \"triglycerides\": 2.6, \"urate\": 380, \"shbg\": 28}",
        "Final Answer: B one",
        "Final Answer: A two",
    };
    auto rt = support::scripted_runtime(script);
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const a = svc.create_session();
    auto const b = svc.create_session();
    svc.post_message(a, "question A1");
    svc.post_message(b, "question B1");
    svc.post_message(a, "question A2");

    auto const ta = svc.transcript(a).dump();
    auto const tb = svc.transcript(b).dump();
    CHECK(ta.find("B one") == std::string::npos);
    CHECK(ta.find("question B1") == std::string::npos);
    CHECK(tb.find("A one") == std::string::npos);
    CHECK(svc.session(a).turns.size() == 2);
    CHECK(svc.session(b).turns.size() == 1);
    CHECK(svc.sources(a).size() == 1);
    CHECK(svc.sources(a)[0].tool_name == "cvd_risk");
    CHECK(svc.sources(b)[0].tool_name == "diabetes_risk");
    CHECK(svc.session(a).tool_state["patients"].contains("cvd10"));
    CHECK_FALSE(svc.session(a).tool_state["patients"].contains("diabetes10"));
}

TEST_CASE("concurrent sessions do not cross-contaminate", "[session_service]")
{
    constexpr int kSessions = 4;
    constexpr int kTurns = 5;
    auto rules = std::vector<llm::ScriptRule> {};
    for (int s = 0; s < kSessions; ++s)
        for (int t = 0; t < kTurns; ++t)
        {
            auto const tag = fmt::format("msg-{}-{}", s, t);
            rules.push_back({ tag, std::nullopt, "Final Answer: reply to " + tag });
        }
    auto backend = std::make_shared<llm::ScriptedBackend>(rules);
    auto rt = std::make_unique<Runtime>(AppConfig::defaults(), backend, support::fixed_time);
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto ids = std::vector<std::string> {};
    for (int s = 0; s < kSessions; ++s)
        ids.push_back(svc.create_session());

    auto threads = std::vector<std::thread> {};
    for (int s = 0; s < kSessions; ++s)
        threads.emplace_back([&, s] {
            for (int t = 0; t < kTurns; ++t)
                svc.post_message(ids[s], fmt::format("msg-{}-{}", s, t));
        });
    for (auto& th: threads)
        th.join();

    for (int s = 0; s < kSessions; ++s)
    {
        auto const state = svc.session(ids[s]);
        REQUIRE(state.turns.size() == kTurns);
        for (int t = 0; t < kTurns; ++t)
        {
            CHECK(state.turns[t].user_message == fmt::format("msg-{}-{}", s, t));
            CHECK(state.turns[t].outcome.final_text == fmt::format("reply to msg-{}-{}", s, t));
        }
    }
}

TEST_CASE("a second post on a busy session is rejected", "[session_service]")
{
    auto backend = std::make_shared<GateBackend>();
    auto rt = std::make_unique<Runtime>(AppConfig::defaults(), backend, support::fixed_time);
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const id = svc.create_session();
    auto first = std::async(std::launch::async, [&] { return svc.post_message(id, "first"); });
    backend->wait_entered();
    CHECK(code_of([&] { (void)svc.post_message(id, "second"); }) == ErrorCode::SessionBusy);
    backend->release();
    CHECK(first.get().outcome.final_text == "released");
    CHECK(svc.session(id).turns.size() == 1);
}

TEST_CASE("queue policy serialises posts", "[session_service]")
{
    auto config = AppConfig::defaults();
    config.busy_policy = BusyPolicy::Queue;
    auto rt = support::scripted_runtime({ "Final Answer: one", "Final Answer: two" }, config);
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const id = svc.create_session();
    auto a = std::async(std::launch::async, [&] { return svc.post_message(id, "a"); });
    auto b = std::async(std::launch::async, [&] { return svc.post_message(id, "b"); });
    a.get();
    b.get();
    auto const state = svc.session(id);
    REQUIRE(state.turns.size() == 2);
    CHECK(state.turns[0].turn_index == 0);
    CHECK(state.turns[1].turn_index == 1);
}

TEST_CASE("closed sessions keep their history but refuse posts", "[session_service]")
{
    auto rt = support::scripted_runtime({ support::kCvdCall, "Final Answer: 32.5%" });
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const id = svc.create_session();
    svc.post_message(id, "risk?");
    svc.close_session(id);
    CHECK(code_of([&] { (void)svc.post_message(id, "more"); }) == ErrorCode::SessionClosed);
    auto const state = svc.session(id);
    CHECK(state.status == agent::SessionStatus::Closed);
    CHECK(state.tool_state.empty());
    CHECK(state.turns.size() == 1);
    CHECK(svc.sources(id).size() == 1);
}

TEST_CASE("blocking grounding withholds ungrounded answers", "[session_service]")
{
    auto config = AppConfig::defaults();
    config.grounding_blocking = true;
    auto rt = support::scripted_runtime({ support::kCvdCall, "Final Answer: The risk is 40%." }, config);
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const id = svc.create_session();
    auto const turn = svc.post_message(id, "risk?");
    CHECK_FALSE(turn.grounding->grounded);
    CHECK(turn.outcome.final_text == "This answer was withheld because it states numbers that no tool issued: 40%.");
}

TEST_CASE("snapshot and restore reproduce the service", "[session_service]")
{
    auto const script = std::vector<std::string> {
        support::kCvdCall,
        "Final Answer: 32.5%",
        "Action: counterfactual_risk\nAction Input: {\"model\": \"cvd10\", \"age\": 58}",
        "Final Answer: 16.2%",
        "Final Answer: hello",
    };
    auto dir = support::TempDir {};
    auto rt = support::scripted_runtime(script);
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const a = svc.create_session();
    auto const b = svc.create_session();
    svc.post_message(a, "risk?");
    svc.post_message(a, "younger?");
    svc.post_message(b, "hi");
    svc.close_session(b);
    svc.save_snapshot(dir.path());
    CHECK(std::filesystem::exists(dir.path() / kSnapshotFile));
    CHECK_FALSE(std::filesystem::exists(dir.path() / (std::string(kSnapshotFile) + ".tmp")));

    auto rt2 = support::scripted_runtime({ "Final Answer: after restart" });
    auto svc2 = SessionService(*rt2, { counter_ids("s") });
    svc2.restore_snapshot(dir.path());

    CHECK(svc2.snapshot_json().dump() == svc.snapshot_json().dump());
    for (const auto& id: { a, b })
    {
        CHECK(svc2.transcript(id, true).dump() == svc.transcript(id, true).dump());
        CHECK(svc2.session(id) == svc.session(id));
        auto const before = svc.sources(id);
        auto const after = svc2.sources(id);
        CHECK(after == before);
    }
    CHECK(svc2.session_ids() == svc.session_ids());

    auto const next = svc2.post_message(a, "again");
    CHECK(next.turn_index == 2);
    CHECK(code_of([&] { svc2.restore_snapshot(dir.path()); }) == ErrorCode::ConfigError);
}

TEST_CASE("tampered snapshots are refused", "[session_service]")
{
    auto rt = support::scripted_runtime({ support::kCvdCall, "Final Answer: 32.5%" });
    auto svc = SessionService(*rt, { counter_ids("s") });
    auto const id = svc.create_session();
    svc.post_message(id, "risk?");
    auto doc = svc.snapshot_json();
    doc["ledger"][0]["payload"]["risk_percent"] = 1.0;

    auto rt2 = support::scripted_runtime({});
    auto svc2 = SessionService(*rt2, { counter_ids("s") });
    CHECK(code_of([&] { svc2.restore_snapshot_json(doc); }) == ErrorCode::ConfigError);
    CHECK(code_of([&] { svc2.restore_snapshot_json(json { { "format", "other" } }); }) == ErrorCode::ConfigError);
}

TEST_CASE("periodic snapshots write the configured directory", "[session_service]")
{
    auto dir = support::TempDir {};
    auto config = AppConfig::defaults();
    config.snapshot_dir = dir.path();
    config.snapshot_interval = std::chrono::seconds(0);
    auto rt = support::scripted_runtime({}, config);
    auto svc = SessionService(*rt, { counter_ids("s") });
    svc.create_session();
    svc.start_periodic_snapshots();
    for (int i = 0; i < 200 && !std::filesystem::exists(dir.path() / kSnapshotFile); ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    svc.stop_periodic_snapshots();
    REQUIRE(std::filesystem::exists(dir.path() / kSnapshotFile));
    CHECK(support::read_json(dir.path() / kSnapshotFile)["sessions"].size() == 1);
}
