// SPDX-License-Identifier: Apache-2.0
#pragma once

// Declarative end-to-end scenarios: a backend script (or replay fixture),
// user messages, and per-turn expectations on tool calls, the final answer
// and grounding. Each run boots its own in-process service.

#include <meditool/runtime.hpp>
#include <meditool/tool_registry.hpp>
#include <meditool/transcript.hpp>

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace meditool::scenario
{

struct ArgPredicate
{
    std::string field;
    std::optional<nlohmann::json> eq;
    std::optional<double> min;
    std::optional<double> max;
};

struct ToolExpectation
{
    std::string name;
    std::vector<ArgPredicate> args;
};

struct TurnExpectation
{
    std::optional<std::vector<ToolExpectation>> tools; // exact sequence when present
    std::vector<std::string> final_contains;
    std::optional<std::string> final_regex;
    std::optional<bool> must_be_grounded;
    std::optional<std::string> status; // "Completed" etc.
};

struct Scenario
{
    std::string name;
    std::string description;
    std::optional<int> question_row;
    std::filesystem::path path;
    std::string backend_kind; // script | fixture | live
    nlohmann::json script = nlohmann::json::array();
    std::filesystem::path fixture;
    nlohmann::json engine_overrides = nlohmann::json::object();
    std::vector<std::string> messages;
    std::vector<TurnExpectation> expectations;
};

/// Throws Error{MalformedScenario} listing every problem.
Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& path = {});
Scenario load_scenario(const std::filesystem::path& path);

struct CheckResult
{
    std::size_t turn_index = 0;
    std::string check;
    bool passed = false;
    std::string detail;
};

struct ScenarioReport
{
    std::string name;
    std::filesystem::path path;
    bool passed = false;
    std::optional<std::string> harness_error;
    std::vector<CheckResult> checks;
    std::vector<agent::TurnRecord> turns;
    std::vector<tools::ProvenanceRecord> provenance;
    std::size_t action_steps = 0;
    bool digests_verified = true;
    double seconds = 0.0;
    std::string transcript_dump; // filled on failure
};

struct RunOptions
{
    bool allow_live = false;
    /// Models, corpus and engine settings; the backend is taken from the scenario.
    AppConfig base = AppConfig::defaults();
};

ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options = {});
ScenarioReport run_scenario(const std::filesystem::path& path, const RunOptions& options = {});

struct SuiteReport
{
    std::vector<ScenarioReport> scenarios;
    std::size_t passed = 0;
    std::size_t failed = 0;
    std::size_t harness_errors = 0;
    double seconds = 0.0;
};

/// Every *.scenario file in `dir`, sorted by file name. An empty directory is
/// an Error{MalformedScenario}.
SuiteReport run_suite(const std::filesystem::path& dir, const RunOptions& options = {});

/// 0 all passed, 1 expectation failure, 2 harness error.
int exit_code(const ScenarioReport& report);
int exit_code(const SuiteReport& report);

nlohmann::json to_json(const ScenarioReport& report);
nlohmann::json to_json(const SuiteReport& report);

/// Human-readable summary lines.
std::string format_report(const ScenarioReport& report);
std::string format_report(const SuiteReport& report);

} // namespace meditool::scenario
