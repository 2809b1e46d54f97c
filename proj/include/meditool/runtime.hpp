// SPDX-License-Identifier: Apache-2.0
#pragma once

// Application wiring: configuration file, model set, corpus, tool registry,
// language model gateway and agent engine.

#include <meditool/agent_engine.hpp>
#include <meditool/clinical_tools.hpp>
#include <meditool/knowledge_store.hpp>
#include <meditool/llm_gateway.hpp>
#include <meditool/risk_models.hpp>
#include <meditool/tool_registry.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace meditool
{

/// Directory holding the bundled models, corpus and scenarios. The
/// MEDITOOL_DATA_DIR environment variable overrides the build-time location.
std::filesystem::path data_dir();

enum class BusyPolicy
{
    Reject, // second concurrent post on a session gets SessionBusy
    Queue,  // second post waits for the first to finish
};

struct BackendConfig
{
    std::string kind = "scripted"; // scripted | replay | live | record
    nlohmann::json script = nlohmann::json::array();
    std::filesystem::path fixture;
};

struct AppConfig
{
    std::vector<std::filesystem::path> model_files;
    std::filesystem::path corpus_dir;
    BackendConfig backend;
    agent::EngineConfig engine;
    tools::ExplainSettings explain;
    std::ptrdiff_t max_concurrent_requests = 8;

    BusyPolicy busy_policy = BusyPolicy::Reject;
    bool grounding_blocking = false;
    std::optional<std::filesystem::path> snapshot_dir;
    std::chrono::seconds snapshot_interval { 30 };

    std::string http_host = "127.0.0.1";
    int http_port = 8080;

    /// Bundled models and corpus, scripted backend with an empty script.
    static AppConfig defaults();

    /// Relative paths resolve against `base_dir`. Throws Error{ConfigError}.
    static AppConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
    static AppConfig load(const std::filesystem::path& file);

    /// Reads the file named by MEDITOOL_CONFIG, or falls back to defaults().
    static AppConfig from_environment();
};

std::shared_ptr<llm::Backend> make_backend(const BackendConfig& config);

class Runtime
{
  public:
    /// `backend` overrides the configured one (tests, scenarios). `clock`
    /// drives provenance timestamps.
    explicit Runtime(AppConfig config, std::shared_ptr<llm::Backend> backend = nullptr, tools::Clock clock = {});

    Runtime(const Runtime&) = delete;
    Runtime& operator=(const Runtime&) = delete;

    [[nodiscard]] const AppConfig& config() const noexcept { return _config; }
    [[nodiscard]] const tools::ModelSet& models() const noexcept { return _models; }
    [[nodiscard]] const knowledge::KnowledgeStore& store() const noexcept { return *_store; }
    [[nodiscard]] tools::ToolRegistry& registry() noexcept { return *_registry; }
    [[nodiscard]] llm::Gateway& gateway() noexcept { return *_gateway; }
    [[nodiscard]] agent::AgentEngine& engine() noexcept { return *_engine; }
    [[nodiscard]] const tools::Clock& clock() const noexcept { return _clock; }

  private:
    AppConfig _config;
    tools::Clock _clock;
    tools::ModelSet _models;
    std::shared_ptr<knowledge::KnowledgeStore> _store;
    std::unique_ptr<tools::ToolRegistry> _registry;
    std::unique_ptr<llm::Gateway> _gateway;
    std::unique_ptr<agent::AgentEngine> _engine;
};

} // namespace meditool
