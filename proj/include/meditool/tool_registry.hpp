// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <meditool/tool_result.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace meditool::tools
{

using Clock = std::function<std::chrono::system_clock::time_point()>;

enum class ArgType
{
    Number,
    Integer,
    Boolean,
    Text,
    Enum,
};

std::string_view to_string(ArgType type) noexcept;

/// One flat scalar argument of a tool. Nesting is not supported.
struct ArgumentSpec
{
    std::string name;
    ArgType type = ArgType::Number;
    bool required = true;
    std::optional<double> min;
    std::optional<double> max;
    std::optional<std::size_t> min_length;
    std::optional<std::size_t> max_length;
    std::vector<std::string> enum_values;
    std::string units;
    std::string description;
};

struct ExampleCall
{
    nlohmann::json arguments = nlohmann::json::object();
    std::string rendered_result; // full "Observation: ..." line
};

struct ToolSpec
{
    std::string name;
    std::string description;
    std::vector<ArgumentSpec> arguments;
    ExampleCall example;
};

struct ValidationResult
{
    nlohmann::json arguments = nlohmann::json::object(); // validated (coerced) values
    std::vector<std::string> errors;

    [[nodiscard]] bool ok() const noexcept { return errors.empty(); }
};

/// Collects every problem rather than stopping at the first one.
ValidationResult validate_arguments(const ToolSpec& spec, const nlohmann::json& args);

/// Per-call context handed to handlers. `state` is the session's persistent
/// tool scratch space (e.g. the last validated patient per model).
struct CallContext
{
    std::string session_id;
    std::size_t turn_index = 0;
    std::size_t step_index = 0;
    nlohmann::json* state = nullptr;
};

/// Thrown by handlers for expected domain errors; becomes an error observation.
class ToolFailure: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

enum class ProvenanceStatus
{
    Ok,
    Failed,
    UnknownTool,
};

std::string_view to_string(ProvenanceStatus status) noexcept;

struct ProvenanceRecord
{
    std::string id;
    std::string session_id;
    std::size_t turn_index = 0;
    std::size_t step_index = 0;
    std::string tool_name;
    nlohmann::json arguments;
    ProvenanceStatus status = ProvenanceStatus::Ok;
    bool ok = true;
    nlohmann::json payload;
    std::string error;
    std::string result_digest;
    std::string timestamp;

    /// Recomputes the digest from the stored payload.
    [[nodiscard]] bool verify() const;

    friend bool operator==(const ProvenanceRecord&, const ProvenanceRecord&) = default;
};

nlohmann::json to_json(const ProvenanceRecord& record);
ProvenanceRecord provenance_from_json(const nlohmann::json& j);

/// Append-only, per-session ordered record of every tool invocation.
class ProvenanceLedger
{
  public:
    /// Assigns the id (unique per session) and appends atomically.
    ProvenanceRecord append(ProvenanceRecord record);

    [[nodiscard]] std::vector<ProvenanceRecord> for_session(std::string_view session_id,
                                                            std::optional<std::size_t> turn_index = {}) const;
    [[nodiscard]] std::vector<ProvenanceRecord> all() const;
    [[nodiscard]] std::size_t size() const;

    /// Used only when restoring a snapshot into an empty ledger.
    void restore(std::vector<ProvenanceRecord> records);

  private:
    mutable std::mutex _mutex;
    std::map<std::string, std::vector<ProvenanceRecord>, std::less<>> _bySession;
};

struct DispatchResult
{
    ToolResult result;
    ProvenanceRecord record;
};

class ToolRegistry
{
  public:
    using Handler = std::function<nlohmann::json(const nlohmann::json& args, CallContext& ctx)>;

    explicit ToolRegistry(Clock clock = {});

    void register_tool(ToolSpec spec, Handler handler);
    void seal();
    [[nodiscard]] bool sealed() const noexcept { return _sealed; }

    [[nodiscard]] bool has_tool(std::string_view name) const;
    [[nodiscard]] std::vector<ToolSpec> list_specs() const;
    [[nodiscard]] std::vector<std::string> tool_names() const;
    [[nodiscard]] const ToolSpec& spec(std::string_view name) const;

    /// Validates, invokes and logs. Throws Error{UnknownTool} without touching
    /// the ledger when the name is not registered.
    DispatchResult dispatch(std::string_view name, const nlohmann::json& args, CallContext& ctx);

    /// Logs an attempt to call a tool that does not exist, so that every action
    /// the model takes has a ledger entry.
    DispatchResult record_unknown_tool(std::string_view name, const nlohmann::json& args, const CallContext& ctx);

    [[nodiscard]] std::vector<ProvenanceRecord> provenance_for(std::string_view session_id,
                                                               std::optional<std::size_t> turn_index = {}) const;

    [[nodiscard]] ProvenanceLedger& ledger() noexcept { return _ledger; }
    [[nodiscard]] const ProvenanceLedger& ledger() const noexcept { return _ledger; }

    /// Name, description, schema and example for every tool; no handlers.
    [[nodiscard]] nlohmann::json manifest() const;

  private:
    struct Entry
    {
        ToolSpec spec;
        Handler handler;
    };

    const Entry* find(std::string_view name) const;
    ProvenanceRecord log(const CallContext& ctx, std::string_view tool, const nlohmann::json& args,
                         ProvenanceStatus status, const ToolResult& result);

    Clock _clock;
    bool _sealed = false;
    std::vector<Entry> _entries;
    ProvenanceLedger _ledger;
};

nlohmann::json to_json(const ToolSpec& spec);

} // namespace meditool::tools
