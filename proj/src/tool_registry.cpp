// SPDX-License-Identifier: Apache-2.0
#include <meditool/canonical_json.hpp>
#include <meditool/error.hpp>
#include <meditool/protocol.hpp>
#include <meditool/tool_registry.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace meditool::tools
{

std::string_view to_string(ArgType type) noexcept
{
    switch (type)
    {
        case ArgType::Number: return "number";
        case ArgType::Integer: return "integer";
        case ArgType::Boolean: return "boolean";
        case ArgType::Text: return "text";
        case ArgType::Enum: return "enum";
    }
    return "unknown";
}

std::string_view to_string(ProvenanceStatus status) noexcept
{
    switch (status)
    {
        case ProvenanceStatus::Ok: return "ok";
        case ProvenanceStatus::Failed: return "failed";
        case ProvenanceStatus::UnknownTool: return "unknown_tool";
    }
    return "unknown";
}

namespace
{

std::string range_text(const ArgumentSpec& arg)
{
    auto const lo = arg.min ? fmt::format("{}", *arg.min) : std::string("-inf");
    auto const hi = arg.max ? fmt::format("{}", *arg.max) : std::string("inf");
    return fmt::format("[{},{}]", lo, hi);
}

bool out_of_range(const ArgumentSpec& arg, double value)
{
    return (arg.min && value < *arg.min) || (arg.max && value > *arg.max);
}

void check_value(const ArgumentSpec& arg, const nlohmann::json& value, ValidationResult& out)
{
    switch (arg.type)
    {
        case ArgType::Number: {
            if (!value.is_number())
            {
                out.errors.push_back(fmt::format("{} must be a number", arg.name));
                return;
            }
            auto const x = value.get<double>();
            if (out_of_range(arg, x))
            {
                out.errors.push_back(fmt::format("{} out of range {}", arg.name, range_text(arg)));
                return;
            }
            out.arguments[arg.name] = value;
            return;
        }
        case ArgType::Integer: {
            if (!value.is_number())
            {
                out.errors.push_back(fmt::format("{} must be an integer", arg.name));
                return;
            }
            auto const x = value.get<double>();
            if (value.is_number_float() && (!std::isfinite(x) || std::floor(x) != x))
            {
                out.errors.push_back(fmt::format("{} must be an integer", arg.name));
                return;
            }
            if (out_of_range(arg, x))
            {
                out.errors.push_back(fmt::format("{} out of range {}", arg.name, range_text(arg)));
                return;
            }
            out.arguments[arg.name] = value.is_number_float() ? nlohmann::json(static_cast<std::int64_t>(x)) : value;
            return;
        }
        case ArgType::Boolean: {
            if (!value.is_boolean())
            {
                out.errors.push_back(fmt::format("{} must be a boolean (true or false)", arg.name));
                return;
            }
            out.arguments[arg.name] = value;
            return;
        }
        case ArgType::Text: {
            if (!value.is_string())
            {
                out.errors.push_back(fmt::format("{} must be text", arg.name));
                return;
            }
            auto const length = value.get_ref<const std::string&>().size();
            if (arg.min_length && length < *arg.min_length)
            {
                out.errors.push_back(fmt::format("{} must be at least {} characters", arg.name, *arg.min_length));
                return;
            }
            if (arg.max_length && length > *arg.max_length)
            {
                out.errors.push_back(fmt::format("{} must be at most {} characters", arg.name, *arg.max_length));
                return;
            }
            out.arguments[arg.name] = value;
            return;
        }
        case ArgType::Enum: {
            auto const& values = arg.enum_values;
            if (!value.is_string()
                || std::find(values.begin(), values.end(), value.get_ref<const std::string&>()) == values.end())
            {
                out.errors.push_back(fmt::format("{} must be one of: {}", arg.name, fmt::join(values, ", ")));
                return;
            }
            out.arguments[arg.name] = value;
            return;
        }
    }
}

void check_spec(const ToolSpec& spec)
{
    auto problems = std::vector<std::string> {};
    if (!protocol::is_tool_identifier(spec.name))
        problems.push_back(fmt::format("tool name '{}' is not an identifier", spec.name));
    auto names = std::set<std::string> {};
    for (const auto& arg: spec.arguments)
    {
        if (!names.insert(arg.name).second)
            problems.push_back(fmt::format("duplicate argument name '{}'", arg.name));
        if (arg.type == ArgType::Enum && arg.enum_values.empty())
            problems.push_back(fmt::format("enum argument '{}' has no values", arg.name));
    }
    if (!problems.empty())
        throw Error(ErrorCode::InvalidToolSpec, fmt::format("invalid tool spec '{}'", spec.name), problems);
}

} // namespace

ValidationResult validate_arguments(const ToolSpec& spec, const nlohmann::json& args)
{
    auto out = ValidationResult {};
    if (!args.is_object())
    {
        out.errors.push_back("arguments must be a JSON object");
        return out;
    }

    auto accepted = std::vector<std::string> {};
    for (const auto& arg: spec.arguments)
        accepted.push_back(arg.name);

    for (const auto& arg: spec.arguments)
    {
        auto const it = args.find(arg.name);
        if (it == args.end())
        {
            if (arg.required)
                out.errors.push_back(fmt::format("missing required field \"{}\"", arg.name));
            continue;
        }
        check_value(arg, *it, out);
    }

    for (const auto& [key, value]: args.items())
    {
        if (std::find(accepted.begin(), accepted.end(), key) == accepted.end())
            out.errors.push_back(
                fmt::format("unknown field \"{}\"; accepted fields: {}", key, fmt::join(accepted, ", ")));
    }

    if (!out.ok())
        out.arguments = nlohmann::json::object();
    return out;
}

bool ProvenanceRecord::verify() const
{
    auto const result = ok ? ToolResult::success(tool_name, payload) : ToolResult::failure(tool_name, error);
    return sha256_hex(payload_text(result)) == result_digest;
}

nlohmann::json to_json(const ProvenanceRecord& record)
{
    auto j = nlohmann::json {
        { "id", record.id },
        { "session_id", record.session_id },
        { "turn_index", record.turn_index },
        { "step_index", record.step_index },
        { "tool_name", record.tool_name },
        { "arguments", record.arguments },
        { "status", to_string(record.status) },
        { "ok", record.ok },
        { "result_digest", record.result_digest },
        { "timestamp", record.timestamp },
    };
    if (record.ok)
        j["payload"] = record.payload;
    else
        j["error"] = record.error;
    return j;
}

ProvenanceRecord provenance_from_json(const nlohmann::json& j)
{
    auto record = ProvenanceRecord {};
    record.id = j.at("id").get<std::string>();
    record.session_id = j.at("session_id").get<std::string>();
    record.turn_index = j.at("turn_index").get<std::size_t>();
    record.step_index = j.at("step_index").get<std::size_t>();
    record.tool_name = j.at("tool_name").get<std::string>();
    record.arguments = j.at("arguments");
    auto const status = j.at("status").get<std::string>();
    record.status = status == "ok"       ? ProvenanceStatus::Ok
                    : status == "failed" ? ProvenanceStatus::Failed
                                         : ProvenanceStatus::UnknownTool;
    record.ok = j.at("ok").get<bool>();
    if (record.ok)
        record.payload = j.at("payload");
    else
        record.error = j.at("error").get<std::string>();
    record.result_digest = j.at("result_digest").get<std::string>();
    record.timestamp = j.at("timestamp").get<std::string>();
    return record;
}

ProvenanceRecord ProvenanceLedger::append(ProvenanceRecord record)
{
    auto const lock = std::lock_guard(_mutex);
    auto& records = _bySession[record.session_id];
    record.id = fmt::format("{}-p{:04}", record.session_id, records.size() + 1);
    records.push_back(record);
    return record;
}

std::vector<ProvenanceRecord> ProvenanceLedger::for_session(std::string_view session_id,
                                                            std::optional<std::size_t> turn_index) const
{
    auto const lock = std::lock_guard(_mutex);
    auto const it = _bySession.find(session_id);
    if (it == _bySession.end())
        return {};
    auto out = std::vector<ProvenanceRecord> {};
    for (const auto& record: it->second)
        if (!turn_index || record.turn_index == *turn_index)
            out.push_back(record);
    return out;
}

std::vector<ProvenanceRecord> ProvenanceLedger::all() const
{
    auto const lock = std::lock_guard(_mutex);
    auto out = std::vector<ProvenanceRecord> {};
    for (const auto& [session, records]: _bySession)
        out.insert(out.end(), records.begin(), records.end());
    return out;
}

std::size_t ProvenanceLedger::size() const
{
    auto const lock = std::lock_guard(_mutex);
    std::size_t n = 0;
    for (const auto& [session, records]: _bySession)
        n += records.size();
    return n;
}

void ProvenanceLedger::restore(std::vector<ProvenanceRecord> records)
{
    auto const lock = std::lock_guard(_mutex);
    _bySession.clear();
    for (auto& record: records)
        _bySession[record.session_id].push_back(std::move(record));
}

ToolRegistry::ToolRegistry(Clock clock): _clock(std::move(clock))
{
    if (!_clock)
        _clock = [] { return std::chrono::system_clock::now(); };
}

void ToolRegistry::register_tool(ToolSpec spec, Handler handler)
{
    if (_sealed)
        throw Error(ErrorCode::RegistrySealed, fmt::format("cannot register '{}': registry is sealed", spec.name));
    check_spec(spec);
    if (find(spec.name))
        throw Error(ErrorCode::DuplicateToolName, fmt::format("tool '{}' is already registered", spec.name));
    _entries.push_back(Entry { std::move(spec), std::move(handler) });
}

void ToolRegistry::seal()
{
    _sealed = true;
}

const ToolRegistry::Entry* ToolRegistry::find(std::string_view name) const
{
    auto const it = std::find_if(_entries.begin(), _entries.end(), [&](const Entry& e) { return e.spec.name == name; });
    return it == _entries.end() ? nullptr : &*it;
}

bool ToolRegistry::has_tool(std::string_view name) const
{
    return find(name) != nullptr;
}

std::vector<ToolSpec> ToolRegistry::list_specs() const
{
    auto specs = std::vector<ToolSpec> {};
    for (const auto& entry: _entries)
        specs.push_back(entry.spec);
    return specs;
}

std::vector<std::string> ToolRegistry::tool_names() const
{
    auto names = std::vector<std::string> {};
    for (const auto& entry: _entries)
        names.push_back(entry.spec.name);
    return names;
}

const ToolSpec& ToolRegistry::spec(std::string_view name) const
{
    if (auto const* entry = find(name))
        return entry->spec;
    throw Error(ErrorCode::UnknownTool, fmt::format("unknown tool '{}'", name));
}

ProvenanceRecord ToolRegistry::log(const CallContext& ctx, std::string_view tool, const nlohmann::json& args,
                                   ProvenanceStatus status, const ToolResult& result)
{
    auto record = ProvenanceRecord {};
    record.session_id = ctx.session_id;
    record.turn_index = ctx.turn_index;
    record.step_index = ctx.step_index;
    record.tool_name = std::string(tool);
    record.arguments = args;
    record.status = status;
    record.ok = result.ok;
    record.payload = result.ok ? result.payload : nlohmann::json(nullptr);
    record.error = result.error;
    record.result_digest = sha256_hex(payload_text(result));
    record.timestamp = format_timestamp(_clock());
    return _ledger.append(std::move(record));
}

DispatchResult ToolRegistry::dispatch(std::string_view name, const nlohmann::json& args, CallContext& ctx)
{
    if (!_sealed)
        throw Error(ErrorCode::RegistryNotSealed, "tools cannot be dispatched before the registry is sealed");
    auto const* entry = find(name);
    if (!entry)
        throw Error(ErrorCode::UnknownTool, fmt::format("unknown tool '{}'", name));

    auto const started = _clock();
    auto const validated = validate_arguments(entry->spec, args);
    if (!validated.ok())
    {
        auto result = ToolResult::failure(std::string(name), fmt::format("{}", fmt::join(validated.errors, "; ")));
        auto record = log(ctx, name, args, ProvenanceStatus::Failed, result);
        return { std::move(result), std::move(record) };
    }

    auto result = ToolResult {};
    try
    {
        result = ToolResult::success(std::string(name), entry->handler(validated.arguments, ctx));
    }
    catch (const ToolFailure& e)
    {
        result = ToolResult::failure(std::string(name), e.what());
    }
    catch (const Error& e)
    {
        auto message = std::string(e.what());
        for (const auto& detail: e.details())
            message += "; " + detail;
        result = ToolResult::failure(std::string(name), message);
    }
    catch (const std::exception& e)
    {
        result = ToolResult::failure(std::string(name), fmt::format("internal tool error: {}", e.what()));
    }
    catch (...)
    {
        result = ToolResult::failure(std::string(name), "internal tool error");
    }
    result.elapsed = std::chrono::duration_cast<std::chrono::microseconds>(_clock() - started);

    auto const status = result.ok ? ProvenanceStatus::Ok : ProvenanceStatus::Failed;
    auto record = log(ctx, name, validated.arguments, status, result);
    return { std::move(result), std::move(record) };
}

DispatchResult ToolRegistry::record_unknown_tool(std::string_view name, const nlohmann::json& args,
                                                 const CallContext& ctx)
{
    auto result = ToolResult::failure(
        std::string(name), fmt::format("unknown tool '{}'; valid tools: {}", name, fmt::join(tool_names(), ", ")));
    auto record = log(ctx, name, args, ProvenanceStatus::UnknownTool, result);
    return { std::move(result), std::move(record) };
}

std::vector<ProvenanceRecord> ToolRegistry::provenance_for(std::string_view session_id,
                                                           std::optional<std::size_t> turn_index) const
{
    return _ledger.for_session(session_id, turn_index);
}

nlohmann::json to_json(const ToolSpec& spec)
{
    auto args = nlohmann::json::array();
    for (const auto& arg: spec.arguments)
    {
        auto a = nlohmann::json { { "name", arg.name }, { "type", to_string(arg.type) }, { "required", arg.required } };
        if (arg.min)
            a["min"] = *arg.min;
        if (arg.max)
            a["max"] = *arg.max;
        if (arg.min_length)
            a["min_length"] = *arg.min_length;
        if (arg.max_length)
            a["max_length"] = *arg.max_length;
        if (!arg.enum_values.empty())
            a["values"] = arg.enum_values;
        if (!arg.units.empty())
            a["units"] = arg.units;
        if (!arg.description.empty())
            a["description"] = arg.description;
        args.push_back(std::move(a));
    }
    return {
        { "name", spec.name },
        { "description", spec.description },
        { "arguments", std::move(args) },
        { "example", { { "arguments", spec.example.arguments }, { "result", spec.example.rendered_result } } },
    };
}

nlohmann::json ToolRegistry::manifest() const
{
    auto tools = nlohmann::json::array();
    for (const auto& entry: _entries)
        tools.push_back(to_json(entry.spec));
    return { { "tools", std::move(tools) } };
}

} // namespace meditool::tools
