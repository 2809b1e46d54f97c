// SPDX-License-Identifier: Apache-2.0
#include <meditool/canonical_json.hpp>
#include <meditool/protocol.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cctype>

namespace meditool
{

ToolResult ToolResult::success(std::string tool, nlohmann::json payload)
{
    return ToolResult { .tool_name = std::move(tool), .ok = true, .payload = std::move(payload), .error = {} };
}

ToolResult ToolResult::failure(std::string tool, std::string message)
{
    return ToolResult { .tool_name = std::move(tool), .ok = false, .payload = nullptr, .error = std::move(message) };
}

std::string payload_text(const ToolResult& result)
{
    if (result.ok)
        return canonical_json(result.payload);
    return "ERROR: " + result.error;
}

} // namespace meditool

namespace meditool::protocol
{

namespace
{

enum class Marker
{
    None,
    Thought,
    Action,
    ActionInput,
    FinalAnswer,
    Observation,
};

struct Line
{
    std::size_t begin = 0;
    std::size_t end = 0; // excludes the line terminator
};

struct MarkerHit
{
    Marker marker = Marker::None;
    std::size_t content = 0; // offset just past the colon
};

constexpr std::string_view kWhitespace = " \t\r\n\f\v";

std::string_view trim(std::string_view text)
{
    auto const first = text.find_first_not_of(kWhitespace);
    if (first == std::string_view::npos)
        return {};
    auto const last = text.find_last_not_of(kWhitespace);
    return text.substr(first, last - first + 1);
}

bool is_blank(std::string_view text)
{
    return text.find_first_not_of(kWhitespace) == std::string_view::npos;
}

std::vector<Line> split_lines(std::string_view raw)
{
    auto lines = std::vector<Line> {};
    std::size_t begin = 0;
    while (begin <= raw.size())
    {
        auto const nl = raw.find('\n', begin);
        auto end = nl == std::string_view::npos ? raw.size() : nl;
        auto line = Line { begin, end };
        if (line.end > line.begin && raw[line.end - 1] == '\r')
            --line.end;
        lines.push_back(line);
        if (nl == std::string_view::npos)
            break;
        begin = nl + 1;
    }
    return lines;
}

bool starts_with_icase(std::string_view text, std::string_view prefix)
{
    if (text.size() < prefix.size())
        return false;
    for (std::size_t i = 0; i < prefix.size(); ++i)
    {
        auto const a = static_cast<unsigned char>(text[i]);
        auto const b = static_cast<unsigned char>(prefix[i]);
        if (std::tolower(a) != std::tolower(b))
            return false;
    }
    return true;
}

MarkerHit detect_marker(std::string_view raw, const Line& line)
{
    auto pos = line.begin;
    while (pos < line.end && (raw[pos] == ' ' || raw[pos] == '\t'))
        ++pos;
    auto const text = raw.substr(pos, line.end - pos);

    struct Candidate
    {
        std::string_view spelling;
        Marker marker;
    };
    static constexpr auto candidates = std::array {
        Candidate { kActionInputMarker, Marker::ActionInput },
        Candidate { kActionMarker, Marker::Action },
        Candidate { kThoughtMarker, Marker::Thought },
        Candidate { kFinalAnswerMarker, Marker::FinalAnswer },
        Candidate { kObservationMarker, Marker::Observation },
    };
    for (const auto& candidate: candidates)
        if (starts_with_icase(text, candidate.spelling))
            return { candidate.marker, pos + candidate.spelling.size() };
    return {};
}

struct Position
{
    std::size_t line;
    std::size_t column;
};

Position position_of(std::string_view raw, std::size_t offset)
{
    offset = std::min(offset, raw.size());
    auto const before = raw.substr(0, offset);
    auto const line = static_cast<std::size_t>(std::count(before.begin(), before.end(), '\n')) + 1;
    auto const last_nl = before.rfind('\n');
    auto const column = last_nl == std::string_view::npos ? offset + 1 : offset - last_nl;
    return { line, column };
}

ParseOutcome fail(std::string_view raw, std::size_t offset, FailureKind kind, std::string_view message,
                  std::vector<std::string> warnings)
{
    auto const pos = position_of(raw, offset);
    return ParseOutcome {
        .result = ParseFailure {
            .kind = kind,
            .diagnostic = fmt::format("line {}, column {}: {}", pos.line, pos.column, message),
            .line = pos.line,
            .column = pos.column,
        },
        .warnings = std::move(warnings),
    };
}

/// Returns one past the bracket that closes the value opened at `start`, or npos.
std::size_t find_balanced_end(std::string_view raw, std::size_t start)
{
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (auto pos = start; pos < raw.size(); ++pos)
    {
        auto const c = raw[pos];
        if (in_string)
        {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"')
            in_string = true;
        else if (c == '{' || c == '[')
            ++depth;
        else if (c == '}' || c == ']')
        {
            if (--depth == 0)
                return pos + 1;
        }
    }
    return std::string_view::npos;
}

std::size_t line_containing(const std::vector<Line>& lines, std::size_t offset)
{
    for (std::size_t i = 0; i < lines.size(); ++i)
    {
        auto const next_begin = i + 1 < lines.size() ? lines[i + 1].begin : std::string_view::npos;
        if (offset < next_begin)
            return i;
    }
    return lines.size() - 1;
}

ParseOutcome parse_impl(std::string_view raw)
{
    auto const lines = split_lines(raw);
    auto warnings = std::vector<std::string> {};

    // Thought segments as [begin, end) offsets into raw.
    auto thought_segments = std::vector<std::pair<std::size_t, std::size_t>> {};
    std::optional<std::pair<std::size_t, std::size_t>> open_thought;
    std::optional<std::variant<Action, FinalAnswer>> body;
    bool warned_trailing = false;

    auto close_thought = [&](std::size_t end) {
        if (open_thought)
        {
            open_thought->second = end;
            thought_segments.push_back(*open_thought);
            open_thought.reset();
        }
    };

    std::size_t i = 0;
    while (i < lines.size())
    {
        auto const& line = lines[i];
        auto const hit = detect_marker(raw, line);

        if (body)
        {
            // Everything after a complete body is either a second body (an error)
            // or discarded text.
            switch (hit.marker)
            {
                case Marker::Action:
                case Marker::ActionInput:
                case Marker::FinalAnswer:
                    return fail(raw, line.begin, FailureKind::MultipleBodies,
                                "a turn must contain exactly one Action or Final Answer", std::move(warnings));
                case Marker::Observation:
                    warnings.push_back(fmt::format("line {}: discarded model-written Observation and all text after it",
                                                   position_of(raw, line.begin).line));
                    i = lines.size();
                    continue;
                case Marker::Thought:
                case Marker::None:
                    if (!warned_trailing && !is_blank(raw.substr(line.begin, line.end - line.begin)))
                    {
                        warnings.push_back(fmt::format("line {}: discarded text after the end of the turn",
                                                       position_of(raw, line.begin).line));
                        warned_trailing = true;
                    }
                    ++i;
                    continue;
            }
        }

        switch (hit.marker)
        {
            case Marker::None: {
                if (!open_thought && !is_blank(raw.substr(line.begin, line.end - line.begin)))
                    open_thought = std::pair { line.begin, line.end }; // unmarked preamble counts as thought
                ++i;
                break;
            }
            case Marker::Thought: {
                close_thought(line.begin);
                open_thought = std::pair { hit.content, line.end };
                ++i;
                break;
            }
            case Marker::Observation: {
                close_thought(line.begin);
                warnings.push_back(fmt::format("line {}: discarded model-written Observation and all text after it",
                                               position_of(raw, line.begin).line));
                i = lines.size();
                break;
            }
            case Marker::ActionInput:
                return fail(raw, line.begin, FailureKind::BadActionInput, "'Action Input:' without a preceding 'Action:'",
                            std::move(warnings));
            case Marker::Action: {
                close_thought(line.begin);
                auto const name = trim(raw.substr(hit.content, line.end - hit.content));
                if (!is_tool_identifier(name))
                    return fail(raw, hit.content, FailureKind::BadActionInput,
                                fmt::format("invalid tool name '{}'; expected [A-Za-z0-9_-]+", name), std::move(warnings));

                auto j = i + 1;
                while (j < lines.size() && is_blank(raw.substr(lines[j].begin, lines[j].end - lines[j].begin)))
                    ++j;
                if (j == lines.size())
                    return fail(raw, line.end, FailureKind::BadActionInput, "missing 'Action Input:' after 'Action:'",
                                std::move(warnings));
                auto const input_hit = detect_marker(raw, lines[j]);
                if (input_hit.marker != Marker::ActionInput)
                    return fail(raw, lines[j].begin, FailureKind::BadActionInput,
                                "expected 'Action Input:' on the line after 'Action:'", std::move(warnings));

                auto const value_start = raw.find_first_not_of(kWhitespace, input_hit.content);
                if (value_start == std::string_view::npos)
                    return fail(raw, input_hit.content, FailureKind::BadActionInput, "empty Action Input",
                                std::move(warnings));

                std::size_t value_end = 0;
                if (raw[value_start] == '{' || raw[value_start] == '[')
                {
                    value_end = find_balanced_end(raw, value_start);
                    if (value_end == std::string_view::npos)
                        return fail(raw, value_start, FailureKind::UnterminatedSection,
                                    "Action Input never closes its opening bracket", std::move(warnings));
                }
                else
                {
                    value_end = lines[line_containing(lines, value_start)].end;
                }

                auto arguments = nlohmann::json {};
                try
                {
                    arguments = nlohmann::json::parse(raw.substr(value_start, value_end - value_start));
                }
                catch (const nlohmann::json::exception& e)
                {
                    return fail(raw, value_start, FailureKind::BadActionInput,
                                fmt::format("Action Input is not valid JSON ({})", e.what()), std::move(warnings));
                }
                if (!arguments.is_object())
                    return fail(raw, value_start, FailureKind::BadActionInput, "Action Input must be a JSON object",
                                std::move(warnings));

                body = Action { .tool_name = std::string(name), .arguments = std::move(arguments) };

                auto const end_line = line_containing(lines, value_end > 0 ? value_end - 1 : 0);
                auto const rest = value_end < lines[end_line].end
                                      ? raw.substr(value_end, lines[end_line].end - value_end)
                                      : std::string_view {};
                if (!is_blank(rest))
                {
                    warnings.push_back(fmt::format("line {}: discarded text after the Action Input object",
                                                   position_of(raw, value_end).line));
                    warned_trailing = true;
                }
                i = end_line + 1;
                break;
            }
            case Marker::FinalAnswer: {
                close_thought(line.begin);
                auto stop = i + 1;
                while (stop < lines.size() && detect_marker(raw, lines[stop]).marker == Marker::None)
                    ++stop;
                auto const text_end = stop < lines.size() ? lines[stop].begin : raw.size();
                auto const text = trim(raw.substr(hit.content, text_end - hit.content));
                if (text.empty())
                    return fail(raw, hit.content, FailureKind::NoBody, "empty Final Answer", std::move(warnings));
                body = FinalAnswer { std::string(text) };
                i = stop;
                break;
            }
        }
    }

    if (!body)
        return fail(raw, raw.size(), FailureKind::NoBody, "expected 'Action:' or 'Final Answer:'", std::move(warnings));

    close_thought(raw.size());
    auto thought = std::string {};
    for (const auto& [begin, end]: thought_segments)
    {
        auto const part = trim(raw.substr(begin, end - begin));
        if (part.empty())
            continue;
        if (!thought.empty())
            thought += '\n';
        thought += part;
    }

    auto turn = ModelTurn { .thought = std::nullopt, .body = std::move(*body) };
    if (!thought.empty())
        turn.thought = std::move(thought);
    return ParseOutcome { .result = std::move(turn), .warnings = std::move(warnings) };
}

bool has_marker_line(std::string_view text)
{
    auto const lines = split_lines(text);
    return std::any_of(lines.begin(), lines.end(),
                       [&](const Line& line) { return detect_marker(text, line).marker != Marker::None; });
}

bool is_clean_text(std::string_view text)
{
    return !text.empty() && trim(text) == text && text.find('\r') == std::string_view::npos
           && !has_marker_line(text);
}

} // namespace

std::string_view to_string(FailureKind kind) noexcept
{
    switch (kind)
    {
        case FailureKind::NoBody: return "NoBody";
        case FailureKind::BadActionInput: return "BadActionInput";
        case FailureKind::UnterminatedSection: return "UnterminatedSection";
        case FailureKind::MultipleBodies: return "MultipleBodies";
    }
    return "Unknown";
}

std::optional<FailureKind> ParseOutcome::failure_kind() const noexcept
{
    if (auto const* f = std::get_if<ParseFailure>(&result))
        return f->kind;
    return std::nullopt;
}

bool is_tool_identifier(std::string_view name) noexcept
{
    return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
    });
}

ParseOutcome parse_model_turn(std::string_view raw) noexcept
{
    try
    {
        return parse_impl(raw);
    }
    catch (const std::exception& e)
    {
        // Only allocation failure can land here.
        return ParseOutcome { .result = ParseFailure { FailureKind::NoBody, e.what(), 0, 0 }, .warnings = {} };
    }
}

bool is_well_formed(const ModelTurn& turn)
{
    if (turn.thought && !is_clean_text(*turn.thought))
        return false;
    if (turn.is_action())
        return is_tool_identifier(turn.action().tool_name) && turn.action().arguments.is_object();
    return is_clean_text(turn.final_answer().text);
}

std::string canonicalize(const ModelTurn& turn)
{
    auto out = std::string {};
    if (turn.thought)
        out += fmt::format("{} {}\n", kThoughtMarker, *turn.thought);
    if (turn.is_action())
    {
        const auto& action = turn.action();
        out += fmt::format("{} {}\n{} {}", kActionMarker, action.tool_name, kActionInputMarker,
                           canonical_json(action.arguments));
    }
    else
    {
        out += fmt::format("{} {}", kFinalAnswerMarker, turn.final_answer().text);
    }
    return out;
}

std::string render_observation(const ToolResult& result)
{
    return fmt::format("{} {}", kObservationMarker, payload_text(result));
}

std::string render_scratchpad(std::span<const AgentStep> steps)
{
    auto out = std::string {};
    for (const auto& step: steps)
    {
        if (!out.empty())
            out += '\n';
        out += canonicalize(step.turn);
        if (step.observation)
        {
            out += '\n';
            out += render_observation(*step.observation);
        }
    }
    return out;
}

} // namespace meditool::protocol
