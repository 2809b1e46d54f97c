// SPDX-License-Identifier: Apache-2.0
#pragma once

// Session history: turns, steps and outcomes, with a lossless JSON form used
// by snapshots and the HTTP API.

#include <meditool/protocol.hpp>

#include <nlohmann/json.hpp>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace meditool::agent
{

enum class OutcomeStatus
{
    Completed,
    BudgetExhausted,
    Aborted,
};

std::string_view to_string(OutcomeStatus status) noexcept;

struct BackendFailure
{
    std::string error_code; // e.g. "BackendUnavailable"
    std::string message;
    std::vector<std::string> details;

    friend bool operator==(const BackendFailure&, const BackendFailure&) = default;
};

struct AgentOutcome
{
    std::string final_text;
    std::vector<protocol::AgentStep> steps;
    OutcomeStatus status = OutcomeStatus::Completed;
    std::size_t recovery_count = 0;
    std::size_t backend_calls = 0;
    std::vector<std::string> warnings; // parser warnings and recovery diagnostics
    std::optional<BackendFailure> backend_failure; // set when the loop stopped on a backend error

    [[nodiscard]] std::size_t action_count() const noexcept;

    friend bool operator==(const AgentOutcome&, const AgentOutcome&) = default;
};

struct NumericClaim
{
    std::string text;   // as written, e.g. "11.2%"
    double value = 0.0; // magnitude, percent sign dropped
    std::size_t offset = 0;
    bool grounded = false;
    std::optional<std::string> provenance_id;

    friend bool operator==(const NumericClaim&, const NumericClaim&) = default;
};

struct GroundingReport
{
    std::size_t turn_index = 0;
    std::vector<NumericClaim> claims;
    bool grounded = true;

    friend bool operator==(const GroundingReport&, const GroundingReport&) = default;
};

struct TurnRecord
{
    std::size_t turn_index = 0;
    std::string user_message;
    std::string started_at;
    std::string finished_at;
    AgentOutcome outcome;
    std::optional<GroundingReport> grounding;

    friend bool operator==(const TurnRecord&, const TurnRecord&) = default;
};

enum class SessionStatus
{
    Open,
    Closed,
};

struct SessionState
{
    std::string session_id;
    std::string created_at;
    SessionStatus status = SessionStatus::Open;
    std::vector<TurnRecord> turns;
    // Tool scratch space; "patients" holds the last validated record per model.
    nlohmann::json tool_state = nlohmann::json::object();

    friend bool operator==(const SessionState&, const SessionState&) = default;
};

nlohmann::json to_json(const ToolResult& result);
ToolResult tool_result_from_json(const nlohmann::json& j);

nlohmann::json to_json(const protocol::ModelTurn& turn);
protocol::ModelTurn model_turn_from_json(const nlohmann::json& j);

/// With `include_thoughts == false` the thought fields are omitted.
nlohmann::json to_json(const protocol::AgentStep& step, bool include_thoughts = true);
protocol::AgentStep agent_step_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AgentOutcome& outcome, bool include_thoughts = true);
AgentOutcome agent_outcome_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GroundingReport& report);
GroundingReport grounding_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TurnRecord& turn, bool include_thoughts = true);
TurnRecord turn_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SessionState& session, bool include_thoughts = true);
SessionState session_from_json(const nlohmann::json& j);

} // namespace meditool::agent
