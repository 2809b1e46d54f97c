// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <string>
#include <string_view>

namespace meditool
{

/// Deterministic single-line serialization: object keys in lexicographic byte
/// order, `", "` between elements and `": "` after keys. Invalid UTF-8 inside
/// strings is replaced rather than rejected.
std::string canonical_json(const nlohmann::json& value);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// ISO-8601 UTC timestamp with millisecond precision, e.g. "2024-01-02T03:04:05.678Z".
std::string format_timestamp(std::chrono::system_clock::time_point tp);

} // namespace meditool
