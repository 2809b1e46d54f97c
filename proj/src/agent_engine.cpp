// SPDX-License-Identifier: Apache-2.0
#include <meditool/agent_engine.hpp>
#include <meditool/canonical_json.hpp>
#include <meditool/error.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <set>

namespace meditool::agent
{

namespace
{

std::string argument_line(const tools::ArgumentSpec& arg)
{
    auto facts = std::vector<std::string> {};
    switch (arg.type)
    {
        case tools::ArgType::Enum: facts.push_back(fmt::format("one of: {}", fmt::join(arg.enum_values, ", "))); break;
        default: facts.emplace_back(tools::to_string(arg.type)); break;
    }
    facts.emplace_back(arg.required ? "required" : "optional");
    if (arg.min && arg.max)
        facts.push_back(fmt::format("{} to {}", *arg.min, *arg.max));
    else if (arg.min)
        facts.push_back(fmt::format("at least {}", *arg.min));
    else if (arg.max)
        facts.push_back(fmt::format("at most {}", *arg.max));
    if (arg.max_length)
        facts.push_back(fmt::format("at most {} characters", *arg.max_length));
    if (!arg.units.empty())
        facts.push_back(arg.units);
    auto line = fmt::format("- {} ({})", arg.name, fmt::join(facts, ", "));
    if (!arg.description.empty())
        line += ": " + arg.description;
    return line;
}

bool is_backend_error(ErrorCode code)
{
    return code == ErrorCode::BackendUnavailable || code == ErrorCode::ScriptExhausted
           || code == ErrorCode::ReplayMiss || code == ErrorCode::FixtureWriteError;
}

std::string trimmed(std::string_view text)
{
    auto const first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos)
        return {};
    auto const last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

} // namespace

std::string build_system_prompt(std::span<const tools::ToolSpec> specs, const EngineConfig& config)
{
    if (specs.empty())
        throw Error(ErrorCode::InvalidArgument, "the system prompt needs at least one tool");
    auto names = std::set<std::string> {};
    for (const auto& spec: specs)
        if (!names.insert(spec.name).second)
            throw Error(ErrorCode::DuplicateToolName, fmt::format("tool '{}' appears twice", spec.name));

    auto out = std::string {};
    if (!config.persona_preamble.empty())
        out += config.persona_preamble + "\n\n";

    out += "Answer the clinician's question by calling the tools listed below. Work one step at a time. "
           "Every message you write must take exactly one of these two forms.\n\n"
           "To call a tool:\n"
           "Thought: <your reasoning>\n"
           "Action: <tool name>\n"
           "Action Input: <JSON object with the tool arguments>\n\n"
           "To answer:\n"
           "Thought: <your reasoning>\n"
           "Final Answer: <your answer to the clinician>\n\n"
           "Stop writing after the Action Input. The system runs the tool and replies with a line that starts "
           "with \"Observation:\". Never write an Observation yourself.\n\n"
           "Every number in a Final Answer (risks, percentages, ages, thresholds) must be taken from an "
           "Observation. If no tool gave you a number, do not state one. If a tool reports an error, fix the "
           "input or tell the clinician what is missing.\n\n"
           "Tools:\n";

    for (const auto& spec: specs)
    {
        out += fmt::format("\nTool: {}\n", spec.name);
        out += fmt::format("Description: {}\n", spec.description);
        out += "Arguments:\n";
        for (const auto& arg: spec.arguments)
            out += argument_line(arg) + "\n";
        out += "Example:\n";
        out += fmt::format("{} {}\n", protocol::kActionMarker, spec.name);
        out += fmt::format("{} {}\n", protocol::kActionInputMarker, canonical_json(spec.example.arguments));
        if (!spec.example.rendered_result.empty())
            out += spec.example.rendered_result + "\n";
    }
    return out;
}

AgentEngine::AgentEngine(tools::ToolRegistry& registry, llm::Gateway& gateway, EngineConfig config):
    _registry(registry), _gateway(gateway), _config(std::move(config)), _clock(std::chrono::system_clock::now)
{
    if (!_registry.sealed())
        throw Error(ErrorCode::RegistryNotSealed, "the agent engine needs a sealed tool registry");
    if (_config.max_steps == 0)
        throw Error(ErrorCode::ConfigError, "max_steps must be positive");
    auto const marker = std::string(protocol::kObservationMarker);
    if (std::find(_config.stop_sequences.begin(), _config.stop_sequences.end(), marker) == _config.stop_sequences.end())
        _config.stop_sequences.push_back(marker);
    auto const specs = _registry.list_specs();
    _systemPrompt = build_system_prompt(specs, _config);
}

llm::CompletionRequest AgentEngine::compose_request(const SessionState& session, std::string_view user_message,
                                                    std::span<const protocol::AgentStep> steps,
                                                    std::string_view scratch_tail) const
{
    auto request = llm::CompletionRequest {};
    request.system_prompt = _systemPrompt;
    request.stop_sequences = _config.stop_sequences;
    request.decoding = _config.decoding;

    // Earlier turns: the question, then the provenance lines and the answer.
    for (const auto& turn: session.turns)
    {
        request.conversation.push_back({ llm::Role::User, turn.user_message });
        auto reply = std::string {};
        for (const auto& step: turn.outcome.steps)
            if (step.turn.is_action() && step.provenance_id)
                reply += fmt::format("[{}] {} {}\n", *step.provenance_id, step.turn.action().tool_name,
                                     canonical_json(step.turn.action().arguments));
        if (turn.outcome.status == OutcomeStatus::Completed)
            reply += fmt::format("{} {}", protocol::kFinalAnswerMarker, turn.outcome.final_text);
        else
            reply += turn.outcome.final_text;
        request.conversation.push_back({ llm::Role::Assistant, std::move(reply) });
    }

    auto text = std::string {};
    if (auto const it = session.tool_state.find("patients"); it != session.tool_state.end() && !it->empty())
    {
        text += "Context:\n";
        for (const auto& [model_id, patient]: it->items())
            text += fmt::format("Patient on record for {}: {}\n", model_id, canonical_json(patient));
        text += "\n";
    }
    text += fmt::format("Question: {}\n", user_message);
    auto const scratchpad = protocol::render_scratchpad(steps);
    if (!scratchpad.empty())
        text += scratchpad + "\n";
    text += scratch_tail;
    request.conversation.push_back({ llm::Role::User, std::move(text) });
    return request;
}

StepResult AgentEngine::step(SessionState& session, const protocol::ModelTurn& turn, std::size_t turn_index,
                             std::size_t step_index)
{
    if (!turn.is_action())
        return StepResult { true, turn.final_answer().text, std::nullopt, std::nullopt };

    auto const& action = turn.action();
    auto ctx = tools::CallContext { session.session_id, turn_index, step_index, &session.tool_state };
    auto dispatched = _registry.has_tool(action.tool_name)
                          ? _registry.dispatch(action.tool_name, action.arguments, ctx)
                          : _registry.record_unknown_tool(action.tool_name, action.arguments, ctx);
    return StepResult { false, {}, std::move(dispatched.result), std::move(dispatched.record.id) };
}

AgentOutcome AgentEngine::run_user_turn(SessionState& session, std::string_view user_message)
{
    if (session.status == SessionStatus::Closed)
        throw Error(ErrorCode::SessionClosed, fmt::format("session '{}' is closed", session.session_id));

    auto record = TurnRecord {};
    record.turn_index = session.turns.size();
    record.user_message = std::string(user_message);
    record.started_at = format_timestamp(_clock());

    auto& outcome = record.outcome;
    auto tail = std::string {};
    bool nudged = false;
    std::size_t actions = 0;

    while (true)
    {
        if (!nudged && actions + 1 >= _config.max_steps)
        {
            tail += fmt::format("{} {}\n", protocol::kObservationMarker, kFinalAnswerNudge);
            nudged = true;
        }

        auto completion = std::string {};
        try
        {
            ++outcome.backend_calls;
            completion = _gateway.complete(compose_request(session, user_message, outcome.steps, tail));
        }
        catch (const Error& e)
        {
            if (!is_backend_error(e.code()))
                throw;
            outcome.status = OutcomeStatus::Aborted;
            outcome.backend_failure = BackendFailure { std::string(to_string(e.code())), e.what(), e.details() };
            outcome.final_text = fmt::format("The language model backend failed ({}): {}", to_string(e.code()), e.what());
            break;
        }

        auto parsed = protocol::parse_model_turn(completion);
        for (auto& w: parsed.warnings)
            outcome.warnings.push_back(fmt::format("call {}: {}", outcome.backend_calls, w));

        if (!parsed.ok())
        {
            auto const& failure = parsed.failure();
            outcome.warnings.push_back(fmt::format("call {}: malformed output ({}): {}", outcome.backend_calls,
                                                   protocol::to_string(failure.kind), failure.diagnostic));
            if (outcome.recovery_count >= _config.max_parse_retries)
            {
                outcome.status = OutcomeStatus::Aborted;
                outcome.final_text = fmt::format(
                    "I could not produce a response in the required format after {} attempts. Last problem: {}",
                    outcome.recovery_count + 1, failure.diagnostic);
                break;
            }
            ++outcome.recovery_count;
            auto const raw = trimmed(completion);
            if (!raw.empty())
                tail += raw + "\n";
            tail += fmt::format("{} your last message was malformed: {}; respond using the required format\n",
                                protocol::kObservationMarker, failure.diagnostic);
            continue;
        }

        auto const& turn = parsed.turn();
        if (turn.is_action() && nudged)
        {
            auto last = std::string { "No tool result was obtained." };
            for (auto it = outcome.steps.rbegin(); it != outcome.steps.rend(); ++it)
                if (it->observation)
                {
                    last = fmt::format("The last tool result ({}) was: {}", it->observation->tool_name,
                                       payload_text(*it->observation));
                    break;
                }
            outcome.status = OutcomeStatus::BudgetExhausted;
            outcome.final_text = fmt::format(
                "I'm sorry, I could not reach a final answer within the limit of {} steps. {}", _config.max_steps, last);
            break;
        }

        auto const step_index = outcome.steps.size();
        auto result = step(session, turn, record.turn_index, step_index);
        outcome.steps.push_back(protocol::AgentStep { step_index, turn, result.observation, result.provenance_id });
        if (result.finished)
        {
            outcome.status = OutcomeStatus::Completed;
            outcome.final_text = std::move(result.final_text);
            break;
        }
        ++actions;
        tail.clear();
    }

    record.finished_at = format_timestamp(_clock());
    auto copy = outcome;
    session.turns.push_back(std::move(record));
    return copy;
}

} // namespace meditool::agent
