// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/grounding.hpp>

#include <fmt/format.h>

#include <cmath>
#include <cstdlib>

namespace meditool::agent
{

namespace
{

bool is_digit(char c) noexcept
{
    return c >= '0' && c <= '9';
}

bool is_alpha(char c) noexcept
{
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

void collect(const nlohmann::json& value, const std::string& provenance_id, std::vector<ObservedNumber>& out)
{
    if (value.is_number())
        out.push_back({ std::abs(value.get<double>()), provenance_id });
    else if (value.is_string())
        for (const auto& t: extract_numeric_tokens(value.get_ref<const std::string&>()))
            out.push_back({ t.value, provenance_id });
    else if (value.is_structured())
        for (const auto& item: value)
            collect(item, provenance_id, out);
}

bool matches(double claim, double observed)
{
    constexpr double slack = 1e-9; // keeps exact-boundary cases from tripping on representation error
    if (std::abs(claim - observed) <= kGroundingTolerance + slack)
        return true;
    return observed <= 1.0 && std::abs(claim - 100.0 * observed) <= kGroundingTolerance + slack;
}

} // namespace

std::vector<NumericToken> extract_numeric_tokens(std::string_view text)
{
    auto tokens = std::vector<NumericToken> {};
    std::size_t i = 0;
    while (i < text.size())
    {
        if (!is_digit(text[i]))
        {
            ++i;
            continue;
        }
        auto const begin = i;
        bool const glued = begin > 0 && (is_alpha(text[begin - 1]) || is_digit(text[begin - 1])
                                         || text[begin - 1] == '.' || text[begin - 1] == '_' || text[begin - 1] == '#');
        while (i < text.size() && is_digit(text[i]))
            ++i;
        if (i + 1 < text.size() && text[i] == '.' && is_digit(text[i + 1]))
        {
            ++i;
            while (i < text.size() && is_digit(text[i]))
                ++i;
        }
        bool dotted = false;
        while (i + 1 < text.size() && text[i] == '.' && is_digit(text[i + 1]))
        {
            dotted = true;
            ++i;
            while (i < text.size() && is_digit(text[i]))
                ++i;
        }
        auto const number_end = i;
        if (i < text.size() && text[i] == '%')
            ++i;
        if (glued || dotted)
            continue;
        auto const digits = std::string(text.substr(begin, number_end - begin));
        tokens.push_back({ std::string(text.substr(begin, i - begin)), std::strtod(digits.c_str(), nullptr), begin });
    }
    return tokens;
}

std::vector<ObservedNumber> observed_numbers(const TurnRecord& turn)
{
    auto out = std::vector<ObservedNumber> {};
    for (const auto& step: turn.outcome.steps)
    {
        if (!step.observation)
            continue;
        auto const id = step.provenance_id.value_or("");
        if (step.observation->ok)
            collect(step.observation->payload, id, out);
        else
            for (const auto& t: extract_numeric_tokens(step.observation->error))
                out.push_back({ t.value, id });
    }
    return out;
}

GroundingReport verify_numeric_grounding(const TurnRecord& turn)
{
    auto const& steps = turn.outcome.steps;
    if (turn.outcome.status != OutcomeStatus::Completed || steps.empty() || steps.back().turn.is_action())
        throw Error(ErrorCode::NoFinalAnswer, fmt::format("turn {} has no final answer", turn.turn_index));

    auto const observed = observed_numbers(turn);
    auto report = GroundingReport {};
    report.turn_index = turn.turn_index;
    for (const auto& token: extract_numeric_tokens(steps.back().turn.final_answer().text))
    {
        auto claim = NumericClaim { token.text, token.value, token.offset, false, std::nullopt };
        for (const auto& o: observed)
        {
            if (matches(token.value, o.value))
            {
                claim.grounded = true;
                claim.provenance_id = o.provenance_id;
                break;
            }
        }
        report.grounded = report.grounded && claim.grounded;
        report.claims.push_back(std::move(claim));
    }
    return report;
}

GroundingReport verify_numeric_grounding(const SessionState& session, std::size_t turn_index)
{
    if (turn_index >= session.turns.size())
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("session '{}' has no turn {}", session.session_id, turn_index));
    return verify_numeric_grounding(session.turns[turn_index]);
}

} // namespace meditool::agent
