// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/transcript.hpp>

#include <fmt/format.h>

#include <algorithm>

namespace meditool::agent
{

using nlohmann::json;

std::string_view to_string(OutcomeStatus status) noexcept
{
    switch (status)
    {
        case OutcomeStatus::Completed: return "Completed";
        case OutcomeStatus::BudgetExhausted: return "BudgetExhausted";
        case OutcomeStatus::Aborted: return "Aborted";
    }
    return "Unknown";
}

std::size_t AgentOutcome::action_count() const noexcept
{
    return static_cast<std::size_t>(
        std::count_if(steps.begin(), steps.end(), [](const auto& s) { return s.turn.is_action(); }));
}

namespace
{

OutcomeStatus outcome_status_from_string(std::string_view text)
{
    if (text == "Completed")
        return OutcomeStatus::Completed;
    if (text == "BudgetExhausted")
        return OutcomeStatus::BudgetExhausted;
    if (text == "Aborted")
        return OutcomeStatus::Aborted;
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown outcome status '{}'", text));
}

template <typename T, typename F>
std::vector<T> list_from(const json& j, F&& convert)
{
    auto out = std::vector<T> {};
    for (const auto& item: j)
        out.push_back(convert(item));
    return out;
}

} // namespace

json to_json(const ToolResult& result)
{
    auto j = json { { "tool_name", result.tool_name },
                    { "ok", result.ok },
                    { "elapsed_us", result.elapsed.count() } };
    if (result.ok)
        j["payload"] = result.payload;
    else
        j["error"] = result.error;
    return j;
}

ToolResult tool_result_from_json(const json& j)
{
    auto result = j.at("ok").get<bool>() ? ToolResult::success(j.at("tool_name"), j.at("payload"))
                                         : ToolResult::failure(j.at("tool_name"), j.at("error"));
    result.elapsed = std::chrono::microseconds(j.value("elapsed_us", std::int64_t { 0 }));
    return result;
}

json to_json(const protocol::ModelTurn& turn)
{
    auto j = json::object();
    if (turn.thought)
        j["thought"] = *turn.thought;
    if (turn.is_action())
        j["action"] = { { "tool_name", turn.action().tool_name }, { "arguments", turn.action().arguments } };
    else
        j["final_answer"] = turn.final_answer().text;
    return j;
}

protocol::ModelTurn model_turn_from_json(const json& j)
{
    auto turn = protocol::ModelTurn {};
    if (auto const it = j.find("thought"); it != j.end())
        turn.thought = it->get<std::string>();
    if (auto const it = j.find("action"); it != j.end())
        turn.body = protocol::Action { it->at("tool_name").get<std::string>(), it->at("arguments") };
    else
        turn.body = protocol::FinalAnswer { j.at("final_answer").get<std::string>() };
    return turn;
}

json to_json(const protocol::AgentStep& step, bool include_thoughts)
{
    auto turn = to_json(step.turn);
    if (!include_thoughts)
        turn.erase("thought");
    auto j = json { { "index", step.index }, { "turn", std::move(turn) } };
    if (step.observation)
    {
        j["observation"] = to_json(*step.observation);
        j["observation_text"] = protocol::render_observation(*step.observation);
    }
    if (step.provenance_id)
        j["provenance_id"] = *step.provenance_id;
    return j;
}

protocol::AgentStep agent_step_from_json(const json& j)
{
    auto step = protocol::AgentStep {};
    step.index = j.at("index").get<std::size_t>();
    step.turn = model_turn_from_json(j.at("turn"));
    if (auto const it = j.find("observation"); it != j.end())
        step.observation = tool_result_from_json(*it);
    if (auto const it = j.find("provenance_id"); it != j.end())
        step.provenance_id = it->get<std::string>();
    return step;
}

json to_json(const AgentOutcome& outcome, bool include_thoughts)
{
    auto steps = json::array();
    for (const auto& s: outcome.steps)
        steps.push_back(to_json(s, include_thoughts));
    auto j = json {
        { "final_text", outcome.final_text },
        { "status", to_string(outcome.status) },
        { "recovery_count", outcome.recovery_count },
        { "backend_calls", outcome.backend_calls },
        { "steps", std::move(steps) },
        { "warnings", outcome.warnings },
    };
    if (outcome.backend_failure)
        j["backend_failure"] = { { "error_code", outcome.backend_failure->error_code },
                                 { "message", outcome.backend_failure->message },
                                 { "details", outcome.backend_failure->details } };
    return j;
}

AgentOutcome agent_outcome_from_json(const json& j)
{
    auto outcome = AgentOutcome {};
    outcome.final_text = j.at("final_text").get<std::string>();
    outcome.status = outcome_status_from_string(j.at("status").get<std::string>());
    outcome.recovery_count = j.at("recovery_count").get<std::size_t>();
    outcome.backend_calls = j.value("backend_calls", std::size_t { 0 });
    outcome.steps = list_from<protocol::AgentStep>(j.at("steps"), agent_step_from_json);
    outcome.warnings = j.value("warnings", std::vector<std::string> {});
    if (auto const it = j.find("backend_failure"); it != j.end())
        outcome.backend_failure = BackendFailure { it->at("error_code"), it->at("message"),
                                                   it->value("details", std::vector<std::string> {}) };
    return outcome;
}

json to_json(const GroundingReport& report)
{
    auto claims = json::array();
    for (const auto& c: report.claims)
    {
        auto cj = json { { "text", c.text }, { "value", c.value }, { "offset", c.offset }, { "grounded", c.grounded } };
        cj["provenance_id"] = c.provenance_id ? json(*c.provenance_id) : json(nullptr);
        claims.push_back(std::move(cj));
    }
    return { { "turn_index", report.turn_index }, { "grounded", report.grounded }, { "claims", std::move(claims) } };
}

GroundingReport grounding_from_json(const json& j)
{
    auto report = GroundingReport {};
    report.turn_index = j.at("turn_index").get<std::size_t>();
    report.grounded = j.at("grounded").get<bool>();
    for (const auto& cj: j.at("claims"))
    {
        auto c = NumericClaim {};
        c.text = cj.at("text").get<std::string>();
        c.value = cj.at("value").get<double>();
        c.offset = cj.at("offset").get<std::size_t>();
        c.grounded = cj.at("grounded").get<bool>();
        if (!cj.at("provenance_id").is_null())
            c.provenance_id = cj.at("provenance_id").get<std::string>();
        report.claims.push_back(std::move(c));
    }
    return report;
}

json to_json(const TurnRecord& turn, bool include_thoughts)
{
    auto j = json {
        { "turn_index", turn.turn_index },
        { "user_message", turn.user_message },
        { "started_at", turn.started_at },
        { "finished_at", turn.finished_at },
        { "outcome", to_json(turn.outcome, include_thoughts) },
    };
    j["grounding"] = turn.grounding ? to_json(*turn.grounding) : json(nullptr);
    return j;
}

TurnRecord turn_from_json(const json& j)
{
    auto turn = TurnRecord {};
    turn.turn_index = j.at("turn_index").get<std::size_t>();
    turn.user_message = j.at("user_message").get<std::string>();
    turn.started_at = j.value("started_at", std::string {});
    turn.finished_at = j.value("finished_at", std::string {});
    turn.outcome = agent_outcome_from_json(j.at("outcome"));
    if (auto const it = j.find("grounding"); it != j.end() && !it->is_null())
        turn.grounding = grounding_from_json(*it);
    return turn;
}

json to_json(const SessionState& session, bool include_thoughts)
{
    auto turns = json::array();
    for (const auto& t: session.turns)
        turns.push_back(to_json(t, include_thoughts));
    return {
        { "session_id", session.session_id },
        { "created_at", session.created_at },
        { "status", session.status == SessionStatus::Open ? "open" : "closed" },
        { "turns", std::move(turns) },
        { "tool_state", session.tool_state },
    };
}

SessionState session_from_json(const json& j)
{
    auto session = SessionState {};
    session.session_id = j.at("session_id").get<std::string>();
    session.created_at = j.value("created_at", std::string {});
    session.status = j.value("status", std::string { "open" }) == "closed" ? SessionStatus::Closed : SessionStatus::Open;
    session.turns = list_from<TurnRecord>(j.at("turns"), turn_from_json);
    session.tool_state = j.value("tool_state", json::object());
    return session;
}

} // namespace meditool::agent
