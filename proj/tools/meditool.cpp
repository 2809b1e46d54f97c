// SPDX-License-Identifier: Apache-2.0
// meditool: service, scenario runner and model utilities.

#include <meditool/clinical_tools.hpp>
#include <meditool/error.hpp>
#include <meditool/http_api.hpp>
#include <meditool/risk_models.hpp>
#include <meditool/runtime.hpp>
#include <meditool/scenario.hpp>
#include <meditool/session_service.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <csignal>
#include <fstream>
#include <iostream>

namespace
{

meditool::service::HttpApi* g_api = nullptr;

void handle_signal(int)
{
    if (g_api)
        g_api->stop();
}

void write_json_report(const std::string& path, const nlohmann::json& report)
{
    auto out = std::ofstream(path);
    out << report.dump(2) << '\n';
    if (!out)
        throw meditool::Error(meditool::ErrorCode::ConfigError, fmt::format("cannot write report '{}'", path));
}

meditool::AppConfig load_config(const std::string& path)
{
    return path.empty() ? meditool::AppConfig::from_environment() : meditool::AppConfig::load(path);
}

int serve(const std::string& config_path, std::string host, int port, bool restore)
{
    auto config = load_config(config_path);
    if (!host.empty())
        config.http_host = host;
    if (port > 0)
        config.http_port = port;

    auto runtime = meditool::Runtime(config);
    auto svc = meditool::service::SessionService(runtime);
    if (restore && config.snapshot_dir)
        svc.restore_snapshot(*config.snapshot_dir);
    svc.start_periodic_snapshots();

    auto api = meditool::service::HttpApi(svc);
    g_api = &api;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    fmt::print("meditool listening on http://{}:{} ({} tools, backend {})\n", config.http_host, config.http_port,
               runtime.registry().tool_names().size(), runtime.gateway().backend().name());
    std::fflush(stdout);
    auto const ok = api.listen(config.http_host, config.http_port);
    g_api = nullptr;
    svc.stop_periodic_snapshots();
    if (config.snapshot_dir)
        svc.save_snapshot(*config.snapshot_dir);
    return ok ? 0 : 2;
}

int predict(const std::string& model_ref, const std::string& patient_text)
{
    auto path = std::filesystem::path(model_ref);
    if (!std::filesystem::exists(path))
        path = meditool::data_dir() / "models" / (model_ref + ".model");
    auto const model = meditool::risk::load_model(path);
    auto const patient = model.patient_from_json(nlohmann::json::parse(patient_text));
    auto const estimate = meditool::risk::predict(model, patient);
    fmt::print("{}\n", meditool::tools::risk_payload(estimate).dump(2));
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    auto app = CLI::App { "Clinical tool orchestration service and scenario runner" };
    app.require_subcommand(1);

    auto config_path = std::string {};
    auto host = std::string {};
    int port = 0;
    bool restore = false;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP session service");
    serve_cmd->add_option("--config", config_path, "Config file (default: $MEDITOOL_CONFIG or bundled defaults)");
    serve_cmd->add_option("--host", host, "Listen address");
    serve_cmd->add_option("--port", port, "Listen port");
    serve_cmd->add_flag("--restore", restore, "Restore sessions from the snapshot directory at startup");

    auto* scenario_cmd = app.add_subcommand("scenario", "Run declarative end-to-end scenarios");
    scenario_cmd->require_subcommand(1);
    auto scenario_path = std::string {};
    auto suite_dir = std::string {};
    auto json_report = std::string {};
    bool allow_live = false;
    auto* run_cmd = scenario_cmd->add_subcommand("run", "Run one scenario file");
    run_cmd->add_option("path", scenario_path, "Scenario file")->required();
    run_cmd->add_flag("--allow-live", allow_live, "Permit scenarios that use the live backend");
    run_cmd->add_option("--json-report", json_report, "Write a JSON report to this path");
    auto* suite_cmd = scenario_cmd->add_subcommand("suite", "Run every *.scenario file in a directory");
    suite_cmd->add_option("dir", suite_dir, "Scenario directory")->required();
    suite_cmd->add_flag("--allow-live", allow_live, "Permit scenarios that use the live backend");
    suite_cmd->add_option("--json-report", json_report, "Write a JSON report to this path");

    auto model_ref = std::string {};
    auto patient = std::string {};
    auto* predict_cmd = app.add_subcommand("predict", "Score one patient with a model file");
    predict_cmd->add_option("--model", model_ref, "Model file path or bundled model id (cvd10, diabetes10)")
        ->required();
    predict_cmd->add_option("--patient", patient, "Patient record as a JSON object")->required();

    auto* tools_cmd = app.add_subcommand("tools", "Print the tool manifest");
    tools_cmd->add_option("--config", config_path, "Config file");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        auto const code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try
    {
        if (*serve_cmd)
            return serve(config_path, host, port, restore);

        auto options = meditool::scenario::RunOptions {};
        options.allow_live = allow_live;
        if (*run_cmd)
        {
            auto const report = meditool::scenario::run_scenario(std::filesystem::path(scenario_path), options);
            fmt::print("{}", meditool::scenario::format_report(report));
            if (!json_report.empty())
                write_json_report(json_report, meditool::scenario::to_json(report));
            return meditool::scenario::exit_code(report);
        }
        if (*suite_cmd)
        {
            auto const report = meditool::scenario::run_suite(suite_dir, options);
            fmt::print("{}", meditool::scenario::format_report(report));
            if (!json_report.empty())
                write_json_report(json_report, meditool::scenario::to_json(report));
            return meditool::scenario::exit_code(report);
        }
        if (*predict_cmd)
            return predict(model_ref, patient);
        if (*tools_cmd)
        {
            auto runtime = meditool::Runtime(load_config(config_path));
            fmt::print("{}\n", runtime.registry().manifest().dump(2));
            return 0;
        }
    }
    catch (const meditool::Error& e)
    {
        fmt::print(stderr, "error [{}]: {}\n", meditool::to_string(e.code()), e.what());
        for (const auto& d: e.details())
            fmt::print(stderr, "  - {}\n", d);
        return 2;
    }
    catch (const std::exception& e)
    {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    }
    return 2;
}
