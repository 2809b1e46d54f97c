// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/grounding.hpp>
#include <meditool/scenario.hpp>
#include <meditool/session_service.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <regex>

namespace meditool::scenario
{

using nlohmann::json;

namespace
{

std::optional<ArgPredicate> parse_predicate(const std::string& field, const json& spec,
                                            std::vector<std::string>& problems, const std::string& where)
{
    auto p = ArgPredicate { field, std::nullopt, std::nullopt, std::nullopt };
    if (!spec.is_object())
    {
        p.eq = spec;
        return p;
    }
    for (const auto& [key, value]: spec.items())
    {
        if (key == "eq")
            p.eq = value;
        else if ((key == "min" || key == "max") && value.is_number())
            (key == "min" ? p.min : p.max) = value.get<double>();
        else
        {
            problems.push_back(fmt::format("{}: predicate on '{}' supports only eq, min and max", where, field));
            return std::nullopt;
        }
    }
    return p;
}

bool json_equal(const json& a, const json& b)
{
    if (a.is_number() && b.is_number())
        return a.get<double>() == b.get<double>();
    return a == b;
}

} // namespace

Scenario parse_scenario(const json& doc, const std::filesystem::path& path)
{
    auto problems = std::vector<std::string> {};
    auto s = Scenario {};
    s.path = path;
    if (!doc.is_object())
        throw Error(ErrorCode::MalformedScenario, fmt::format("scenario '{}' must be a JSON object", path.string()));

    s.name = doc.value("name", path.stem().string());
    s.description = doc.value("description", std::string {});
    if (auto const it = doc.find("question_row"); it != doc.end() && !it->is_null())
    {
        if (it->is_number_integer())
            s.question_row = it->get<int>();
        else
            problems.push_back("question_row must be an integer or null");
    }

    auto const backend = doc.value("backend", json::object());
    if (backend.contains("script"))
    {
        s.backend_kind = "script";
        s.script = backend["script"];
        if (!s.script.is_array() || s.script.empty())
            problems.push_back("backend.script must be a non-empty array");
    }
    else if (backend.contains("fixture") && backend["fixture"].is_string())
    {
        s.backend_kind = "fixture";
        s.fixture = std::filesystem::path(backend["fixture"].get<std::string>());
        if (s.fixture.is_relative() && !path.empty())
            s.fixture = path.parent_path() / s.fixture;
    }
    else if (backend.value("live", false))
        s.backend_kind = "live";
    else
        problems.push_back("backend must contain a script, a fixture path, or \"live\": true");

    s.engine_overrides = doc.value("engine", json::object());

    if (auto const it = doc.find("messages"); it != doc.end() && it->is_array())
    {
        for (const auto& m: *it)
        {
            if (m.is_string() && !m.get_ref<const std::string&>().empty())
                s.messages.push_back(m.get<std::string>());
            else
                problems.push_back("messages must be non-empty strings");
        }
    }
    if (s.messages.empty())
        problems.push_back("a scenario needs at least one message");

    if (auto const it = doc.find("expectations"); it != doc.end())
    {
        if (!it->is_array())
            problems.push_back("expectations must be an array");
        else
            for (std::size_t i = 0; i < it->size(); ++i)
            {
                auto const& ej = (*it)[i];
                auto const where = fmt::format("expectations[{}]", i);
                auto e = TurnExpectation {};
                if (auto const t = ej.find("tools"); t != ej.end())
                {
                    e.tools.emplace();
                    for (const auto& tj: *t)
                    {
                        auto te = ToolExpectation {};
                        if (tj.is_string())
                            te.name = tj.get<std::string>();
                        else if (tj.is_object() && tj.contains("name") && tj["name"].is_string())
                        {
                            te.name = tj["name"].get<std::string>();
                            auto const args = tj.value("args", json::object());
                            for (const auto& [field, spec]: args.items())
                                if (auto p = parse_predicate(field, spec, problems, where))
                                    te.args.push_back(std::move(*p));
                        }
                        else
                            problems.push_back(fmt::format("{}.tools entries must be names or {{name, args}}", where));
                        e.tools->push_back(std::move(te));
                    }
                }
                if (auto const f = ej.find("final_contains"); f != ej.end())
                {
                    if (f->is_string())
                        e.final_contains.push_back(f->get<std::string>());
                    else if (f->is_array())
                        e.final_contains = f->get<std::vector<std::string>>();
                    else
                        problems.push_back(fmt::format("{}.final_contains must be text or a list", where));
                }
                if (auto const r = ej.find("final_regex"); r != ej.end())
                {
                    e.final_regex = r->get<std::string>();
                    try
                    {
                        auto const check = std::regex(*e.final_regex);
                    }
                    catch (const std::regex_error& err)
                    {
                        problems.push_back(fmt::format("{}.final_regex does not compile: {}", where, err.what()));
                    }
                }
                if (auto const g = ej.find("must_be_grounded"); g != ej.end())
                    e.must_be_grounded = g->get<bool>();
                if (auto const st = ej.find("status"); st != ej.end())
                    e.status = st->get<std::string>();
                s.expectations.push_back(std::move(e));
            }
    }
    if (s.expectations.size() > s.messages.size())
        problems.push_back(fmt::format("{} expectations for {} messages", s.expectations.size(), s.messages.size()));

    if (!problems.empty())
        throw Error(ErrorCode::MalformedScenario, fmt::format("malformed scenario '{}'", path.string()), problems);
    return s;
}

Scenario load_scenario(const std::filesystem::path& path)
{
    auto in = std::ifstream(path);
    if (!in)
        throw Error(ErrorCode::MalformedScenario, fmt::format("cannot open scenario '{}'", path.string()));
    try
    {
        return parse_scenario(json::parse(in), path);
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorCode::MalformedScenario, fmt::format("scenario '{}' is not valid JSON", path.string()),
                    { e.what() });
    }
}

namespace
{

void check_turn(const TurnExpectation& e, const agent::TurnRecord& turn, std::vector<CheckResult>& out)
{
    auto add = [&](std::string check, bool passed, std::string detail) {
        out.push_back({ turn.turn_index, std::move(check), passed, std::move(detail) });
    };

    auto const expected_status = e.status.value_or("Completed");
    auto const actual_status = std::string(agent::to_string(turn.outcome.status));
    add("status", actual_status == expected_status,
        fmt::format("expected {}, got {}{}", expected_status, actual_status,
                    turn.outcome.backend_failure ? " (" + turn.outcome.backend_failure->message + ")" : ""));

    if (e.tools)
    {
        auto actual = std::vector<const protocol::Action*> {};
        for (const auto& step: turn.outcome.steps)
            if (step.turn.is_action())
                actual.push_back(&step.turn.action());
        auto expected_names = std::vector<std::string> {};
        for (const auto& t: *e.tools)
            expected_names.push_back(t.name);
        auto actual_names = std::vector<std::string> {};
        for (const auto* a: actual)
            actual_names.push_back(a->tool_name);
        add("tools", expected_names == actual_names,
            fmt::format("expected [{}], got [{}]", fmt::join(expected_names, ", "), fmt::join(actual_names, ", ")));

        for (std::size_t i = 0; i < e.tools->size() && i < actual.size(); ++i)
        {
            for (const auto& p: (*e.tools)[i].args)
            {
                auto const& args = actual[i]->arguments;
                auto const label = fmt::format("tools[{}].{}", i, p.field);
                if (!args.contains(p.field))
                {
                    add(label, false, "argument missing");
                    continue;
                }
                auto const& v = args[p.field];
                bool ok = true;
                if (p.eq && !json_equal(v, *p.eq))
                    ok = false;
                if ((p.min || p.max) && !v.is_number())
                    ok = false;
                else if (p.min && v.get<double>() < *p.min)
                    ok = false;
                else if (p.max && v.get<double>() > *p.max)
                    ok = false;
                add(label, ok, fmt::format("value {}", v.dump()));
            }
        }
    }

    auto const& text = turn.outcome.final_text;
    for (const auto& needle: e.final_contains)
        add("final_contains", text.find(needle) != std::string::npos, fmt::format("'{}' in final answer", needle));
    if (e.final_regex)
        add("final_regex", std::regex_search(text, std::regex(*e.final_regex)),
            fmt::format("/{}/ matches final answer", *e.final_regex));
    if (e.must_be_grounded)
    {
        auto const grounded = turn.grounding && turn.grounding->grounded;
        auto ungrounded = std::vector<std::string> {};
        if (turn.grounding)
            for (const auto& c: turn.grounding->claims)
                if (!c.grounded)
                    ungrounded.push_back(c.text);
        add("grounding", grounded == *e.must_be_grounded,
            fmt::format("expected grounded={}, ungrounded claims: [{}]", *e.must_be_grounded,
                        fmt::join(ungrounded, ", ")));
    }
}

std::chrono::system_clock::time_point scenario_epoch()
{
    // 2024-01-01T00:00:00Z; a fixed clock keeps reports reproducible.
    return std::chrono::system_clock::time_point(std::chrono::seconds(1704067200));
}

} // namespace

ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options)
{
    auto const started = std::chrono::steady_clock::now();
    auto report = ScenarioReport {};
    report.name = scenario.name;
    report.path = scenario.path;

    std::unique_ptr<Runtime> runtime;
    std::unique_ptr<service::SessionService> svc;
    auto session_id = std::string {};
    try
    {
        auto backend = std::shared_ptr<llm::Backend> {};
        if (scenario.backend_kind == "script")
            backend = llm::ScriptedBackend::from_json(scenario.script);
        else if (scenario.backend_kind == "fixture")
            backend = std::make_shared<llm::ReplayBackend>(scenario.fixture);
        else if (!options.allow_live)
            throw Error(ErrorCode::ConfigError,
                        fmt::format("scenario '{}' needs the live backend; rerun with --allow-live", scenario.name));
        else
            backend = make_backend(BackendConfig { "live", json::array(), {} });

        auto config = options.base;
        auto const& o = scenario.engine_overrides;
        config.engine.max_steps = o.value("max_steps", config.engine.max_steps);
        config.engine.max_parse_retries = o.value("max_parse_retries", config.engine.max_parse_retries);
        config.busy_policy = BusyPolicy::Reject;
        config.grounding_blocking = false;

        runtime = std::make_unique<Runtime>(std::move(config), std::move(backend), [] { return scenario_epoch(); });
        svc = std::make_unique<service::SessionService>(*runtime, service::ServiceOptions { service::counter_ids("s") });
        session_id = svc->create_session();

        for (const auto& message: scenario.messages)
            report.turns.push_back(svc->post_message(session_id, message));

        for (std::size_t i = 0; i < scenario.expectations.size(); ++i)
            check_turn(scenario.expectations[i], report.turns[i], report.checks);

        report.provenance = svc->sources(session_id);
        for (const auto& t: report.turns)
            report.action_steps += t.outcome.action_count();
        report.digests_verified = std::all_of(report.provenance.begin(), report.provenance.end(),
                                              [](const auto& r) { return r.verify(); });
        report.checks.push_back({ 0, "provenance", report.provenance.size() == report.action_steps,
                                  fmt::format("{} records for {} action steps", report.provenance.size(),
                                              report.action_steps) });
        report.checks.push_back({ 0, "digests", report.digests_verified, "ledger digests verify" });
    }
    catch (const Error& e)
    {
        auto detail = std::string(e.what());
        for (const auto& d: e.details())
            detail += "; " + d;
        report.harness_error = fmt::format("{}: {}", to_string(e.code()), detail);
    }
    catch (const std::exception& e)
    {
        report.harness_error = e.what();
    }

    report.passed = !report.harness_error
                    && std::all_of(report.checks.begin(), report.checks.end(), [](const auto& c) { return c.passed; });
    if (!report.passed && svc && !session_id.empty())
        report.transcript_dump = svc->transcript(session_id, true).dump(2);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

ScenarioReport run_scenario(const std::filesystem::path& path, const RunOptions& options)
{
    try
    {
        return run_scenario(load_scenario(path), options);
    }
    catch (const Error& e)
    {
        auto report = ScenarioReport {};
        report.name = path.stem().string();
        report.path = path;
        auto detail = std::string(e.what());
        for (const auto& d: e.details())
            detail += "; " + d;
        report.harness_error = detail;
        return report;
    }
}

SuiteReport run_suite(const std::filesystem::path& dir, const RunOptions& options)
{
    if (!std::filesystem::is_directory(dir))
        throw Error(ErrorCode::MalformedScenario, fmt::format("'{}' is not a directory", dir.string()));
    auto files = std::vector<std::filesystem::path> {};
    for (const auto& entry: std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".scenario")
            files.push_back(entry.path());
    if (files.empty())
        throw Error(ErrorCode::MalformedScenario, fmt::format("no .scenario files in '{}'", dir.string()));
    std::sort(files.begin(), files.end());

    auto const started = std::chrono::steady_clock::now();
    auto suite = SuiteReport {};
    for (const auto& file: files)
    {
        auto report = run_scenario(file, options);
        if (report.harness_error)
            ++suite.harness_errors;
        else if (report.passed)
            ++suite.passed;
        else
            ++suite.failed;
        suite.scenarios.push_back(std::move(report));
    }
    suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return suite;
}

int exit_code(const ScenarioReport& report)
{
    if (report.harness_error)
        return 2;
    return report.passed ? 0 : 1;
}

int exit_code(const SuiteReport& report)
{
    if (report.harness_errors > 0)
        return 2;
    return report.failed > 0 ? 1 : 0;
}

json to_json(const ScenarioReport& report)
{
    auto checks = json::array();
    for (const auto& c: report.checks)
        checks.push_back({ { "turn", c.turn_index }, { "check", c.check }, { "passed", c.passed }, { "detail", c.detail } });
    auto tools_called = json::array();
    for (const auto& r: report.provenance)
        tools_called.push_back(r.tool_name);
    auto j = json {
        { "name", report.name },
        { "path", report.path.string() },
        { "passed", report.passed },
        { "checks", std::move(checks) },
        { "provenance_records", report.provenance.size() },
        { "action_steps", report.action_steps },
        { "tools_called", std::move(tools_called) },
        { "digests_verified", report.digests_verified },
        { "seconds", report.seconds },
    };
    j["harness_error"] = report.harness_error ? json(*report.harness_error) : json(nullptr);
    if (!report.transcript_dump.empty())
        j["transcript"] = json::parse(report.transcript_dump);
    return j;
}

json to_json(const SuiteReport& report)
{
    auto scenarios = json::array();
    for (const auto& s: report.scenarios)
        scenarios.push_back(to_json(s));
    return { { "passed", report.passed },       { "failed", report.failed },
             { "harness_errors", report.harness_errors }, { "seconds", report.seconds },
             { "scenarios", std::move(scenarios) } };
}

std::string format_report(const ScenarioReport& report)
{
    auto out = fmt::format("{} {} ({:.3f}s)\n", report.passed ? "PASS" : "FAIL", report.name, report.seconds);
    if (report.harness_error)
        out += fmt::format("  harness error: {}\n", *report.harness_error);
    for (const auto& c: report.checks)
        if (!c.passed)
            out += fmt::format("  turn {} {}: {}\n", c.turn_index, c.check, c.detail);
    if (!report.passed && !report.transcript_dump.empty())
        out += "  transcript:\n" + report.transcript_dump + "\n";
    return out;
}

std::string format_report(const SuiteReport& report)
{
    auto out = std::string {};
    for (const auto& s: report.scenarios)
        out += format_report(s);
    out += fmt::format("{}/{} scenarios passed, {} failed, {} harness errors ({:.3f}s)\n", report.passed,
                       report.scenarios.size(), report.failed, report.harness_errors, report.seconds);
    return out;
}

} // namespace meditool::scenario
