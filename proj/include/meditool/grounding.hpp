// SPDX-License-Identifier: Apache-2.0
#pragma once

// Numeric grounding of final answers against the observations of the same turn.
//
// A numeric token is a run of digits with an optional ".digits" fraction and
// an optional trailing '%'. Runs glued to a letter, digit, '.' or '_' on the
// left (e.g. "QRISK3") and dotted section numbers such as "1.4.10" are not
// claims. A claim is grounded when some number in an observation of the turn
// lies within 0.05 of it, either directly or after scaling a fraction in
// [0, 1] to percent.

#include <meditool/transcript.hpp>

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace meditool::agent
{

inline constexpr double kGroundingTolerance = 0.05;

struct NumericToken
{
    std::string text;
    double value = 0.0;
    std::size_t offset = 0;
};

/// Decimal numbers with an optional '%'. Digits glued to a letter, digit, '.',
/// '_' or '#' on the left (QRISK3, x_2, cvd_guideline#1) and dotted section
/// numbers (1.3.2) are identifiers, not claims.
std::vector<NumericToken> extract_numeric_tokens(std::string_view text);

struct ObservedNumber
{
    double value = 0.0;
    std::string provenance_id;
};

/// Every JSON number in a payload plus numeric tokens inside its strings; for
/// error results, the numeric tokens of the error text.
std::vector<ObservedNumber> observed_numbers(const TurnRecord& turn);

/// Throws Error{NoFinalAnswer} when the turn did not end in a final answer.
GroundingReport verify_numeric_grounding(const TurnRecord& turn);
GroundingReport verify_numeric_grounding(const SessionState& session, std::size_t turn_index);

} // namespace meditool::agent
