// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace meditool
{

enum class ErrorCode
{
    InvalidArgument,
    ConfigError,
    // tool registry
    DuplicateToolName,
    RegistrySealed,
    RegistryNotSealed,
    InvalidToolSpec,
    UnknownTool,
    // risk models
    MalformedModelFile,
    CoefficientCountMismatch,
    ValidationFailure,
    // explainer
    TooManyFeatures,
    // knowledge store
    DuplicateDocument,
    EmptyDocument,
    StoreEmpty,
    StoreSealed,
    UnknownChunk,
    // llm gateway
    BackendUnavailable,
    ScriptExhausted,
    ReplayMiss,
    FixtureWriteError,
    // sessions
    UnknownSession,
    SessionBusy,
    SessionClosed,
    NoFinalAnswer,
    // scenarios
    MalformedScenario,
};

/// Stable identifier used in HTTP error bodies and reports, e.g. "UnknownSession".
std::string_view to_string(ErrorCode code) noexcept;

class Error: public std::runtime_error
{
  public:
    Error(ErrorCode code, std::string message, std::vector<std::string> details = {});

    [[nodiscard]] ErrorCode code() const noexcept { return _code; }
    [[nodiscard]] const std::vector<std::string>& details() const noexcept { return _details; }

  private:
    ErrorCode _code;
    std::vector<std::string> _details;
};

} // namespace meditool
