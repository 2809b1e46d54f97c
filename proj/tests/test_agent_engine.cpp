// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <meditool/agent_engine.hpp>
#include <meditool/error.hpp>

#include <catch_amalgamated.hpp>

#include <random>

using namespace meditool;
using namespace meditool::agent;
using nlohmann::json;

namespace
{

SessionState fresh(std::string id = "s0001")
{
    auto s = SessionState {};
    s.session_id = std::move(id);
    return s;
}

std::size_t count_occurrences(const std::string& text, const std::string& needle)
{
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

tools::ToolSpec named_tool(std::string name)
{
    auto spec = tools::ToolSpec {};
    spec.name = std::move(name);
    spec.description = "test tool";
    return spec;
}

} // namespace

TEST_CASE("system prompt structure", "[agent_engine]")
{
    auto const config = EngineConfig {};
    auto const specs = std::vector<tools::ToolSpec> { named_tool("first_tool"), named_tool("second_tool") };
    auto const prompt = build_system_prompt(specs, config);
    CHECK(count_occurrences(prompt, "\nTool: ") == 2);
    CHECK(prompt.find("Tool: first_tool") < prompt.find("Tool: second_tool"));
    CHECK(prompt.find(std::string(kDefaultPersona)) == 0);
    CHECK(prompt.find("must be taken from an Observation") != std::string::npos);
    CHECK(build_system_prompt(specs, config) == prompt);

    CHECK_THROWS_AS(build_system_prompt(std::vector<tools::ToolSpec> {}, config), Error);
    auto const dup = std::vector<tools::ToolSpec> { named_tool("a"), named_tool("a") };
    CHECK_THROWS_AS(build_system_prompt(dup, config), Error);
}

TEST_CASE("bundled tools appear in the prompt with examples", "[agent_engine]")
{
    auto rt = support::scripted_runtime({});
    auto const& prompt = rt->engine().system_prompt();
    CHECK(count_occurrences(prompt, "\nTool: ") == 5);
    for (auto const* name: { "cvd_risk", "diabetes_risk", "counterfactual_risk", "explain_prediction", "search_knowledge" })
        CHECK(prompt.find(std::string("Tool: ") + name) != std::string::npos);
    CHECK(prompt.find("Observation: {\"clamped\": false") != std::string::npos);
}

TEST_CASE("action then final answer", "[agent_engine]")
{
    auto rt = support::scripted_runtime({ support::kCvdCall, "Thought: done\nFinal Answer: The 10-year risk is 32.5%." });
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "What is this patient's CVD risk?");
    CHECK(outcome.status == OutcomeStatus::Completed);
    REQUIRE(outcome.steps.size() == 2);
    CHECK(outcome.action_count() == 1);
    CHECK(outcome.backend_calls == 2);
    CHECK(outcome.final_text == "The 10-year risk is 32.5%.");
    CHECK(outcome.steps[0].observation->payload["risk_percent"] == 32.5);
    CHECK(outcome.steps[0].provenance_id == "s0001-p0001");
    CHECK_FALSE(outcome.steps[1].observation.has_value());
    CHECK(rt->registry().provenance_for("s0001").size() == 1);
    REQUIRE(session.turns.size() == 1);
    CHECK(session.turns[0].outcome == outcome);
    CHECK(session.turns[0].started_at == "2024-01-01T00:00:00.000Z");
    CHECK(session.tool_state["patients"].contains("cvd10"));
}

TEST_CASE("immediate final answer touches no tools", "[agent_engine]")
{
    auto rt = support::scripted_runtime({ "Final Answer: hello" });
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "hi");
    CHECK(outcome.status == OutcomeStatus::Completed);
    CHECK(outcome.steps.size() == 1);
    CHECK(rt->registry().ledger().size() == 0);
}

TEST_CASE("malformed output is retried then aborted", "[agent_engine]")
{
    auto rt = support::scripted_runtime({ "garbage one", "garbage two", "garbage three" });
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "q");
    CHECK(outcome.status == OutcomeStatus::Aborted);
    CHECK(outcome.recovery_count == 2);
    CHECK(outcome.backend_calls == 3);
    CHECK(outcome.steps.empty());
    CHECK(outcome.final_text.rfind("I could not produce a response in the required format after 3 attempts", 0) == 0);
    CHECK_FALSE(outcome.backend_failure.has_value());
}

TEST_CASE("recovery feeds the diagnostic back to the model", "[agent_engine]")
{
    auto backend = std::make_shared<llm::ScriptedBackend>(std::vector<std::string> { "Action: cvd_risk", "Final Answer: ok" });
    auto rt = std::make_unique<Runtime>(AppConfig::defaults(), backend, support::fixed_time);
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "q");
    CHECK(outcome.status == OutcomeStatus::Completed);
    CHECK(outcome.recovery_count == 1);

    auto const request = rt->engine().compose_request(session, "q2", {}, "tail\n");
    CHECK(request.conversation.back().text == "Question: q2\ntail\n");
}

TEST_CASE("step budget forces a final answer", "[agent_engine]")
{
    auto config = AppConfig::defaults();
    config.engine.max_steps = 3;
    auto const search = "Action: search_knowledge\nAction Input: {\"query\": \"QRISK3 validation\"}";
    auto rt = support::scripted_runtime({ search, search, search }, config);
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "q");
    CHECK(outcome.status == OutcomeStatus::BudgetExhausted);
    CHECK(outcome.action_count() == 2);
    CHECK(outcome.backend_calls == 3);
    CHECK(outcome.final_text.rfind("I'm sorry, I could not reach a final answer within the limit of 3 steps. "
                                   "The last tool result (search_knowledge) was: {",
                                   0)
          == 0);
    CHECK(rt->registry().ledger().size() == 2);
}

namespace
{

class CapturingBackend: public llm::Backend
{
  public:
    explicit CapturingBackend(std::vector<std::string> script): _inner(std::move(script)) {}
    std::string complete(const llm::CompletionRequest& request) override
    {
        prompts.push_back(request.conversation.back().text);
        return _inner.complete(request);
    }
    [[nodiscard]] std::string_view name() const noexcept override { return "capturing"; }

    std::vector<std::string> prompts;

  private:
    llm::ScriptedBackend _inner;
};

} // namespace

TEST_CASE("the nudge reaches the model before the last step", "[agent_engine]")
{
    auto config = AppConfig::defaults();
    config.engine.max_steps = 2;
    auto backend = std::make_shared<CapturingBackend>(std::vector<std::string> { support::kCvdCall, "Final Answer: done" });
    auto rt = std::make_unique<Runtime>(config, backend, support::fixed_time);
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "q");
    CHECK(outcome.status == OutcomeStatus::Completed);
    REQUIRE(backend->prompts.size() == 2);
    auto const nudge = std::string("Observation: ") + std::string(kFinalAnswerNudge);
    CHECK(backend->prompts[0].find(nudge) == std::string::npos);
    CHECK(backend->prompts[1].find("Observation: {") != std::string::npos);
    CHECK(backend->prompts[1].find(nudge) != std::string::npos);
}

TEST_CASE("recovery prompt quotes the malformed output", "[agent_engine]")
{
    auto backend = std::make_shared<CapturingBackend>(std::vector<std::string> { "Action: cvd_risk", "Final Answer: ok" });
    auto rt = std::make_unique<Runtime>(AppConfig::defaults(), backend, support::fixed_time);
    auto session = fresh();
    rt->engine().run_user_turn(session, "q");
    REQUIRE(backend->prompts.size() == 2);
    CHECK(backend->prompts[1].find("Action: cvd_risk\nObservation: your last message was malformed: line 1, column 17: "
                                   "missing 'Action Input:' after 'Action:'")
          != std::string::npos);
    CHECK(backend->prompts[1].find("respond using the required format") != std::string::npos);
}

TEST_CASE("unknown tools get a corrective observation", "[agent_engine]")
{
    auto rt = support::scripted_runtime(
        { "Action: nonexistent_tool\nAction Input: {}", "Final Answer: I used the wrong tool." });
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "q");
    CHECK(outcome.status == OutcomeStatus::Completed);
    REQUIRE(outcome.steps.size() == 2);
    auto const& obs = *outcome.steps[0].observation;
    CHECK_FALSE(obs.ok);
    CHECK(obs.error.find("unknown tool") != std::string::npos);
    for (auto const* name: { "cvd_risk", "diabetes_risk", "counterfactual_risk", "explain_prediction", "search_knowledge" })
        CHECK(obs.error.find(name) != std::string::npos);
    auto const records = rt->registry().provenance_for("s0001");
    REQUIRE(records.size() == 1);
    CHECK(records[0].status == tools::ProvenanceStatus::UnknownTool);
}

TEST_CASE("step mirrors direct registry dispatch", "[agent_engine]")
{
    auto rt = support::scripted_runtime({});
    auto session = fresh();
    auto const args = json::parse(R"({"age": 68, "sex": "male", "systolic_bp": 148, "chol_hdl_ratio": 4.8, "bmi": 29.5})");
    auto const result = rt->engine().step(session, protocol::ModelTurn { std::nullopt, protocol::Action { "cvd_risk", args } }, 0, 0);
    CHECK_FALSE(result.finished);

    auto ctx = tools::CallContext { "other", 0, 0, nullptr };
    auto const direct = rt->registry().dispatch("cvd_risk", args, ctx);
    CHECK(result.observation->payload == direct.result.payload);

    auto const fin = rt->engine().step(session, protocol::ModelTurn { std::nullopt, protocol::FinalAnswer { "done" } }, 0, 1);
    CHECK(fin.finished);
    CHECK(fin.final_text == "done");
}

TEST_CASE("backend failures are recorded, not thrown", "[agent_engine]")
{
    auto rt = support::scripted_runtime({ support::kCvdCall });
    auto session = fresh();
    auto const outcome = rt->engine().run_user_turn(session, "q");
    CHECK(outcome.status == OutcomeStatus::Aborted);
    REQUIRE(outcome.backend_failure.has_value());
    CHECK(outcome.backend_failure->error_code == "ScriptExhausted");
    CHECK(outcome.action_count() == 1);
    CHECK(session.turns.size() == 1);
    CHECK(rt->registry().ledger().size() == 1);
}

TEST_CASE("closed sessions refuse turns", "[agent_engine]")
{
    auto rt = support::scripted_runtime({ "Final Answer: x" });
    auto session = fresh();
    session.status = SessionStatus::Closed;
    CHECK_THROWS_AS(rt->engine().run_user_turn(session, "q"), Error);
}

TEST_CASE("earlier turns are summarised into the conversation", "[agent_engine]")
{
    auto rt = support::scripted_runtime({ support::kCvdCall, "Final Answer: 32.5%", "Final Answer: ok" });
    auto session = fresh();
    rt->engine().run_user_turn(session, "risk?");
    auto const request = rt->engine().compose_request(session, "and now?", {}, "");
    REQUIRE(request.conversation.size() == 3);
    CHECK(request.conversation[0].text == "risk?");
    CHECK(request.conversation[1].text.find("[s0001-p0001] cvd_risk {") == 0);
    CHECK(request.conversation[1].text.find("Final Answer: 32.5%") != std::string::npos);
    CHECK(request.conversation[2].text.find("Patient on record for cvd10") != std::string::npos);
    CHECK(request.stop_sequences == std::vector<std::string> { "Observation:" });
}

TEST_CASE("scripted runs are deterministic", "[agent_engine]")
{
    auto const script = std::vector<std::string> {
        support::kCvdCall,
        "Action: counterfactual_risk\nAction Input: {\"model\": \"cvd10\", \"age\": 58}",
        "Final Answer: 32.5% now, 16.2% if younger.",
    };
    auto run = [&] {
        auto rt = support::scripted_runtime(script);
        auto session = fresh();
        auto const outcome = rt->engine().run_user_turn(session, "q");
        return std::pair { outcome, rt->registry().ledger().all() };
    };
    auto const a = run();
    auto const b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("backend calls stay within the step and retry budget", "[agent_engine]")
{
    auto rng = std::mt19937_64(77);
    auto const pool = std::vector<std::string> {
        support::kCvdCall,
        "Action: search_knowledge\nAction Input: {\"query\": \"statin\"}",
        "Action: ghost\nAction Input: {}",
        "not a turn",
        "Action: cvd_risk\nAction Input: {\"age\": 150}",
        "Final Answer: done",
    };
    for (int trial = 0; trial < 200; ++trial)
    {
        auto config = AppConfig::defaults();
        config.engine.max_steps = 1 + rng() % 6;
        config.engine.max_parse_retries = rng() % 3;
        auto script = std::vector<std::string> {};
        for (int i = 0; i < 20; ++i)
            script.push_back(pool[rng() % pool.size()]);
        auto rt = support::scripted_runtime(script, config);
        auto session = fresh();
        auto const outcome = rt->engine().run_user_turn(session, "q");
        REQUIRE(outcome.backend_calls <= config.engine.max_steps + config.engine.max_parse_retries);
        REQUIRE(outcome.action_count() < config.engine.max_steps);
        REQUIRE(outcome.recovery_count <= config.engine.max_parse_retries);
        REQUIRE(rt->registry().ledger().size() == outcome.action_count());
    }
}
