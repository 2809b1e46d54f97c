// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <string>

namespace meditool
{

/// Output of one tool invocation. `ok` is true iff `payload` holds a structured
/// value; otherwise `error` carries the message shown to the model.
struct ToolResult
{
    std::string tool_name;
    bool ok = true;
    nlohmann::json payload;
    std::string error;
    std::chrono::microseconds elapsed { 0 };

    static ToolResult success(std::string tool, nlohmann::json payload);
    static ToolResult failure(std::string tool, std::string message);

    friend bool operator==(const ToolResult&, const ToolResult&) = default;
};

/// Canonical text of the result payload (what follows "Observation: ").
/// Provenance digests are computed over exactly this text.
std::string payload_text(const ToolResult& result);

} // namespace meditool
