// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>

namespace meditool
{

std::string_view to_string(ErrorCode code) noexcept
{
    switch (code)
    {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::DuplicateToolName: return "DuplicateToolName";
        case ErrorCode::RegistrySealed: return "RegistrySealed";
        case ErrorCode::RegistryNotSealed: return "RegistryNotSealed";
        case ErrorCode::InvalidToolSpec: return "InvalidToolSpec";
        case ErrorCode::UnknownTool: return "UnknownTool";
        case ErrorCode::MalformedModelFile: return "MalformedModelFile";
        case ErrorCode::CoefficientCountMismatch: return "CoefficientCountMismatch";
        case ErrorCode::ValidationFailure: return "ValidationFailure";
        case ErrorCode::TooManyFeatures: return "TooManyFeatures";
        case ErrorCode::DuplicateDocument: return "DuplicateDocument";
        case ErrorCode::EmptyDocument: return "EmptyDocument";
        case ErrorCode::StoreEmpty: return "StoreEmpty";
        case ErrorCode::StoreSealed: return "StoreSealed";
        case ErrorCode::UnknownChunk: return "UnknownChunk";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::ScriptExhausted: return "ScriptExhausted";
        case ErrorCode::ReplayMiss: return "ReplayMiss";
        case ErrorCode::FixtureWriteError: return "FixtureWriteError";
        case ErrorCode::UnknownSession: return "UnknownSession";
        case ErrorCode::SessionBusy: return "SessionBusy";
        case ErrorCode::SessionClosed: return "SessionClosed";
        case ErrorCode::NoFinalAnswer: return "NoFinalAnswer";
        case ErrorCode::MalformedScenario: return "MalformedScenario";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, std::string message, std::vector<std::string> details):
    std::runtime_error(std::move(message)), _code(code), _details(std::move(details))
{
}

} // namespace meditool
