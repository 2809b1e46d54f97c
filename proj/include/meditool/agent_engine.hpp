// SPDX-License-Identifier: Apache-2.0
#pragma once

// Think-act-observe loop over one user message.

#include <meditool/llm_gateway.hpp>
#include <meditool/protocol.hpp>
#include <meditool/tool_registry.hpp>
#include <meditool/transcript.hpp>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace meditool::agent
{

inline constexpr std::string_view kDefaultPersona =
    "You are a clinical decision support assistant. You help clinicians use approved risk models, "
    "explanation methods and reference documents. You do not diagnose and you do not invent numbers.";

inline constexpr std::string_view kFinalAnswerNudge = "you must now answer with Final Answer";

struct EngineConfig
{
    std::size_t max_steps = 8;
    std::size_t max_parse_retries = 2;
    std::string persona_preamble { kDefaultPersona };
    llm::DecodingParams decoding;
    std::vector<std::string> stop_sequences { std::string(protocol::kObservationMarker) };
};

/// Persona, grammar, the numeric-claims rule and one block per tool (in the
/// given order). Throws DuplicateToolName, or InvalidArgument when empty.
std::string build_system_prompt(std::span<const tools::ToolSpec> specs, const EngineConfig& config);

struct StepResult
{
    bool finished = false;
    std::string final_text;                 // Finish
    std::optional<ToolResult> observation;  // Continue
    std::optional<std::string> provenance_id;
};

class AgentEngine
{
  public:
    /// The registry must be sealed. The observation marker is added to the
    /// stop sequences if the config omits it.
    AgentEngine(tools::ToolRegistry& registry, llm::Gateway& gateway, EngineConfig config = {});

    /// Runs the loop and appends a TurnRecord to `session`. Backend errors do
    /// not throw: the turn is recorded as Aborted with `backend_failure` set so
    /// the transcript stays consistent with the ledger.
    AgentOutcome run_user_turn(SessionState& session, std::string_view user_message);

    /// Executes one parsed turn. Unknown tools become an error observation that
    /// names the valid tools, and are still logged.
    StepResult step(SessionState& session, const protocol::ModelTurn& turn, std::size_t turn_index,
                    std::size_t step_index);

    /// Prompt for the next backend call. `scratch_tail` is appended after the
    /// rendered scratchpad (recovery and budget observations).
    [[nodiscard]] llm::CompletionRequest compose_request(const SessionState& session, std::string_view user_message,
                                                         std::span<const protocol::AgentStep> steps,
                                                         std::string_view scratch_tail) const;

    [[nodiscard]] const std::string& system_prompt() const noexcept { return _systemPrompt; }
    [[nodiscard]] const EngineConfig& config() const noexcept { return _config; }
    [[nodiscard]] tools::ToolRegistry& registry() noexcept { return _registry; }

    void set_clock(tools::Clock clock) { _clock = std::move(clock); }

  private:
    tools::ToolRegistry& _registry;
    llm::Gateway& _gateway;
    EngineConfig _config;
    std::string _systemPrompt;
    tools::Clock _clock;
};

} // namespace meditool::agent
