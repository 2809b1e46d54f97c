// SPDX-License-Identifier: Apache-2.0
#pragma once

// Textual turn protocol between the agent loop and the language model.
//
//   Thought: <free text, optional>
//   Action: <tool_name>
//   Action Input: <JSON object, may span lines until brackets balance>
// or
//   Thought: <free text, optional>
//   Final Answer: <text to end>
//
// Markers are matched case-insensitively at the start of a line. The grammar is
// documented byte-for-byte in docs/protocol.md.

#include <meditool/tool_result.hpp>

#include <nlohmann/json.hpp>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace meditool::protocol
{

inline constexpr std::string_view kThoughtMarker = "Thought:";
inline constexpr std::string_view kActionMarker = "Action:";
inline constexpr std::string_view kActionInputMarker = "Action Input:";
inline constexpr std::string_view kFinalAnswerMarker = "Final Answer:";
inline constexpr std::string_view kObservationMarker = "Observation:";

struct Action
{
    std::string tool_name;
    nlohmann::json arguments = nlohmann::json::object();

    friend bool operator==(const Action&, const Action&) = default;
};

struct FinalAnswer
{
    std::string text;

    friend bool operator==(const FinalAnswer&, const FinalAnswer&) = default;
};

struct ModelTurn
{
    std::optional<std::string> thought;
    std::variant<Action, FinalAnswer> body;

    [[nodiscard]] bool is_action() const noexcept { return std::holds_alternative<Action>(body); }
    [[nodiscard]] const Action& action() const { return std::get<Action>(body); }
    [[nodiscard]] const FinalAnswer& final_answer() const { return std::get<FinalAnswer>(body); }

    friend bool operator==(const ModelTurn&, const ModelTurn&) = default;
};

enum class FailureKind
{
    NoBody,
    BadActionInput,
    UnterminatedSection,
    MultipleBodies,
};

std::string_view to_string(FailureKind kind) noexcept;

struct ParseFailure
{
    FailureKind kind;
    std::string diagnostic; // "line L, column C: ..."
    std::size_t line = 0;   // 1-based
    std::size_t column = 0; // 1-based, in bytes
};

struct ParseOutcome
{
    std::variant<ModelTurn, ParseFailure> result;
    std::vector<std::string> warnings;

    [[nodiscard]] bool ok() const noexcept { return std::holds_alternative<ModelTurn>(result); }
    [[nodiscard]] const ModelTurn& turn() const { return std::get<ModelTurn>(result); }
    [[nodiscard]] const ParseFailure& failure() const { return std::get<ParseFailure>(result); }
    [[nodiscard]] std::optional<FailureKind> failure_kind() const noexcept;
};

/// One iteration of the loop: a parsed turn plus, for actions, the observation
/// and the provenance record that backs it.
struct AgentStep
{
    std::size_t index = 0;
    ModelTurn turn;
    std::optional<ToolResult> observation;
    std::optional<std::string> provenance_id;

    friend bool operator==(const AgentStep&, const AgentStep&) = default;
};

/// Total over arbitrary input; never throws.
ParseOutcome parse_model_turn(std::string_view raw) noexcept;

/// True when `turn` survives canonicalize/parse unchanged: identifier tool
/// name, object arguments, trimmed non-empty texts with no marker lines.
bool is_well_formed(const ModelTurn& turn);

/// Normalized marker casing, arguments as canonical JSON (sorted keys).
std::string canonicalize(const ModelTurn& turn);

/// "Observation: <canonical payload>" or "Observation: ERROR: <message>".
std::string render_observation(const ToolResult& result);

/// Each step's canonical turn followed by its observation, newline separated.
std::string render_scratchpad(std::span<const AgentStep> steps);

bool is_tool_identifier(std::string_view name) noexcept;

} // namespace meditool::protocol
