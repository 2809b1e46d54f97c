// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/runtime.hpp>

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>

namespace meditool
{

using nlohmann::json;

std::filesystem::path data_dir()
{
    if (auto const* env = std::getenv("MEDITOOL_DATA_DIR"); env && *env)
        return env;
    return MEDITOOL_DATA_DIR;
}

AppConfig AppConfig::defaults()
{
    auto config = AppConfig {};
    auto const dir = data_dir();
    config.model_files = { dir / "models" / "cvd10.model", dir / "models" / "diabetes10.model" };
    config.corpus_dir = dir / "corpus";
    return config;
}

namespace
{

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p)
{
    auto const path = std::filesystem::path(p);
    return path.is_absolute() ? path : base / path;
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const char* where)
{
    auto const it = obj.find(key);
    if (it == obj.end())
        return fallback;
    try
    {
        return it->get<T>();
    }
    catch (const json::exception&)
    {
        throw Error(ErrorCode::ConfigError, fmt::format("config field {}.{} has the wrong type", where, key));
    }
}

} // namespace

AppConfig AppConfig::from_json(const json& doc, const std::filesystem::path& base_dir)
{
    if (!doc.is_object())
        throw Error(ErrorCode::ConfigError, "config must be a JSON object");
    auto config = defaults();

    if (auto const it = doc.find("models"); it != doc.end())
    {
        config.model_files.clear();
        for (const auto& m: *it)
            config.model_files.push_back(resolve(base_dir, m.get<std::string>()));
    }
    if (auto const it = doc.find("corpus"); it != doc.end())
        config.corpus_dir = resolve(base_dir, it->get<std::string>());

    if (auto const it = doc.find("backend"); it != doc.end())
    {
        config.backend.kind = get_or<std::string>(*it, "kind", "scripted", "backend");
        config.backend.script = it->value("script", json::array());
        if (it->contains("fixture"))
            config.backend.fixture = resolve(base_dir, (*it)["fixture"].get<std::string>());
        if (config.backend.kind != "scripted" && config.backend.kind != "replay" && config.backend.kind != "live"
            && config.backend.kind != "record")
            throw Error(ErrorCode::ConfigError,
                        fmt::format("backend.kind must be scripted, replay, live or record, got '{}'",
                                    config.backend.kind));
    }

    if (auto const it = doc.find("engine"); it != doc.end())
    {
        auto& e = config.engine;
        e.max_steps = get_or<std::size_t>(*it, "max_steps", e.max_steps, "engine");
        e.max_parse_retries = get_or<std::size_t>(*it, "max_parse_retries", e.max_parse_retries, "engine");
        e.persona_preamble = get_or<std::string>(*it, "persona_preamble", e.persona_preamble, "engine");
        e.decoding.temperature = get_or<double>(*it, "temperature", e.decoding.temperature, "engine");
        e.decoding.max_output_tokens = get_or<int>(*it, "max_output_tokens", e.decoding.max_output_tokens, "engine");
        e.stop_sequences = get_or<std::vector<std::string>>(*it, "stop_sequences", e.stop_sequences, "engine");
        config.max_concurrent_requests =
            get_or<std::ptrdiff_t>(*it, "max_concurrent_requests", config.max_concurrent_requests, "engine");
        config.explain.n_permutations =
            get_or<std::size_t>(*it, "explain_permutations", config.explain.n_permutations, "engine");
        config.explain.seed = get_or<std::uint64_t>(*it, "explain_seed", config.explain.seed, "engine");
    }

    if (auto const it = doc.find("service"); it != doc.end())
    {
        auto const busy = get_or<std::string>(*it, "busy_policy", "reject", "service");
        if (busy != "reject" && busy != "queue")
            throw Error(ErrorCode::ConfigError, "service.busy_policy must be 'reject' or 'queue'");
        config.busy_policy = busy == "queue" ? BusyPolicy::Queue : BusyPolicy::Reject;
        config.grounding_blocking = get_or<bool>(*it, "grounding_blocking", false, "service");
        if (auto const dir = it->find("snapshot_dir"); dir != it->end() && dir->is_string())
            config.snapshot_dir = resolve(base_dir, dir->get<std::string>());
        config.snapshot_interval =
            std::chrono::seconds(get_or<long>(*it, "snapshot_interval_secs", config.snapshot_interval.count(), "service"));
        config.http_host = get_or<std::string>(*it, "host", config.http_host, "service");
        config.http_port = get_or<int>(*it, "port", config.http_port, "service");
    }
    return config;
}

AppConfig AppConfig::load(const std::filesystem::path& file)
{
    auto in = std::ifstream(file);
    if (!in)
        throw Error(ErrorCode::ConfigError, fmt::format("cannot open config file '{}'", file.string()));
    auto doc = json {};
    try
    {
        doc = json::parse(in);
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorCode::ConfigError, fmt::format("config file '{}' is not valid JSON", file.string()),
                    { e.what() });
    }
    return from_json(doc, std::filesystem::absolute(file).parent_path());
}

AppConfig AppConfig::from_environment()
{
    if (auto const* env = std::getenv("MEDITOOL_CONFIG"); env && *env)
        return load(env);
    return defaults();
}

std::shared_ptr<llm::Backend> make_backend(const BackendConfig& config)
{
    if (config.kind == "scripted")
        return llm::ScriptedBackend::from_json(config.script);
    if (config.kind == "replay")
        return std::make_shared<llm::ReplayBackend>(config.fixture);
    auto live = std::make_shared<llm::HttpChatBackend>(llm::HttpChatConfig::from_env());
    if (config.kind == "record")
        return llm::record_session(std::move(live), config.fixture);
    return live;
}

Runtime::Runtime(AppConfig config, std::shared_ptr<llm::Backend> backend, tools::Clock clock):
    _config(std::move(config)), _clock(clock ? std::move(clock) : tools::Clock(std::chrono::system_clock::now))
{
    for (const auto& file: _config.model_files)
        _models.push_back(std::make_shared<const risk::RiskModel>(risk::load_model(file)));

    _store = std::make_shared<knowledge::KnowledgeStore>();
    if (!_config.corpus_dir.empty())
        knowledge::load_corpus(*_store, _config.corpus_dir);
    _store->seal();

    _registry = std::make_unique<tools::ToolRegistry>(_clock);
    tools::register_clinical_tools(*_registry, _models, _store, _config.explain);
    _registry->seal();

    if (!backend)
        backend = make_backend(_config.backend);
    _gateway = std::make_unique<llm::Gateway>(std::move(backend), _config.max_concurrent_requests);
    _engine = std::make_unique<agent::AgentEngine>(*_registry, *_gateway, _config.engine);
    _engine->set_clock(_clock);
}

} // namespace meditool
