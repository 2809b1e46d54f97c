// SPDX-License-Identifier: Apache-2.0
#include <meditool/canonical_json.hpp>
#include <meditool/error.hpp>
#include <meditool/llm_gateway.hpp>

#include <fmt/format.h>
#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace meditool::llm
{

std::string_view to_string(Role role) noexcept
{
    return role == Role::User ? "user" : "assistant";
}

nlohmann::json to_json(const CompletionRequest& request)
{
    auto conversation = nlohmann::json::array();
    for (const auto& m: request.conversation)
        conversation.push_back({ { "role", to_string(m.role) }, { "text", m.text } });
    return {
        { "system_prompt", request.system_prompt },
        { "conversation", std::move(conversation) },
        { "stop_sequences", request.stop_sequences },
        { "temperature", request.decoding.temperature },
        { "max_output_tokens", request.decoding.max_output_tokens },
    };
}

std::string request_digest(const CompletionRequest& request)
{
    return sha256_hex(canonical_json(to_json(request)));
}

nlohmann::json request_summary(const CompletionRequest& request)
{
    auto last_user = std::string {};
    for (auto it = request.conversation.rbegin(); it != request.conversation.rend(); ++it)
        if (it->role == Role::User)
        {
            last_user = it->text;
            break;
        }
    // Keep the question line and the tail of the scratchpad, which is what a
    // reader needs to tell fixture records apart.
    constexpr std::size_t kHead = 160;
    constexpr std::size_t kTail = 240;
    auto excerpt = last_user.size() <= kHead + kTail
                       ? last_user
                       : last_user.substr(0, kHead) + " ... " + last_user.substr(last_user.size() - kTail);
    return {
        { "messages", request.conversation.size() },
        { "system_prompt_sha256", sha256_hex(request.system_prompt) },
        { "last_user_excerpt", std::move(excerpt) },
    };
}

std::string truncate_at_stop(std::string text, std::span<const std::string> stop_sequences)
{
    auto cut = std::string::npos;
    for (const auto& stop: stop_sequences)
    {
        if (stop.empty())
            continue;
        cut = std::min(cut, text.find(stop));
    }
    if (cut != std::string::npos)
        text.resize(cut);
    return text;
}

// ---------------------------------------------------------------------------
// Scripted

ScriptedBackend::ScriptedBackend(std::vector<std::string> completions)
{
    for (auto& c: completions)
        _rules.push_back({ std::nullopt, std::nullopt, std::move(c) });
    _used.assign(_rules.size(), false);
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptRule> rules): _rules(std::move(rules)), _sequential(false)
{
    _used.assign(_rules.size(), false);
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& script)
{
    if (!script.is_array())
        throw Error(ErrorCode::InvalidArgument, "script must be an array");
    bool const sequential = std::all_of(script.begin(), script.end(), [](const auto& x) { return x.is_string(); });
    if (sequential)
        return std::make_unique<ScriptedBackend>(script.get<std::vector<std::string>>());

    auto rules = std::vector<ScriptRule> {};
    for (std::size_t i = 0; i < script.size(); ++i)
    {
        auto const& item = script[i];
        if (!item.is_object() || !item.contains("completion") || !item["completion"].is_string())
            throw Error(ErrorCode::InvalidArgument, fmt::format("script[{}] needs a string 'completion'", i));
        auto rule = ScriptRule { std::nullopt, std::nullopt, item["completion"].get<std::string>() };
        if (auto const it = item.find("user_contains"); it != item.end() && it->is_string())
            rule.user_contains = it->get<std::string>();
        if (auto const it = item.find("call_index"); it != item.end() && it->is_number_unsigned())
            rule.call_index = it->get<std::size_t>();
        rules.push_back(std::move(rule));
    }
    return std::make_unique<ScriptedBackend>(std::move(rules));
}

std::string ScriptedBackend::complete(const CompletionRequest& request)
{
    auto lock = std::lock_guard { _mutex };
    auto const call = _calls++;
    if (_sequential)
    {
        if (_next >= _rules.size())
            throw Error(ErrorCode::ScriptExhausted,
                        fmt::format("scripted backend has no completion left for call {} ({} scripted)", call,
                                    _rules.size()));
        _used[_next] = true;
        return _rules[_next++].completion;
    }

    auto const* latest = static_cast<const Message*>(nullptr);
    for (auto it = request.conversation.rbegin(); it != request.conversation.rend(); ++it)
        if (it->role == Role::User)
        {
            latest = &*it;
            break;
        }
    for (std::size_t i = 0; i < _rules.size(); ++i)
    {
        auto const& rule = _rules[i];
        if (_used[i])
            continue;
        if (rule.call_index && *rule.call_index != call)
            continue;
        if (rule.user_contains && (!latest || latest->text.find(*rule.user_contains) == std::string::npos))
            continue;
        _used[i] = true;
        return rule.completion;
    }
    throw Error(ErrorCode::ScriptExhausted, fmt::format("no unused scripted rule matches call {}", call));
}

std::size_t ScriptedBackend::calls() const
{
    auto lock = std::lock_guard { _mutex };
    return _calls;
}

std::size_t ScriptedBackend::remaining() const
{
    auto lock = std::lock_guard { _mutex };
    return static_cast<std::size_t>(std::count(_used.begin(), _used.end(), false));
}

// ---------------------------------------------------------------------------
// Replay / record

ReplayBackend::ReplayBackend(const std::filesystem::path& fixture)
{
    auto in = std::ifstream(fixture);
    if (!in)
        throw Error(ErrorCode::ConfigError, fmt::format("cannot open replay fixture '{}'", fixture.string()));
    auto line = std::string {};
    std::size_t number = 0;
    while (std::getline(in, line))
    {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try
        {
            auto const record = nlohmann::json::parse(line);
            _byDigest[record.at("request_digest").get<std::string>()].push_back(
                record.at("completion").get<std::string>());
        }
        catch (const nlohmann::json::exception& e)
        {
            throw Error(ErrorCode::ConfigError,
                        fmt::format("replay fixture '{}' line {} is not a valid record", fixture.string(), number),
                        { e.what() });
        }
    }
}

std::string ReplayBackend::complete(const CompletionRequest& request)
{
    auto const digest = request_digest(request);
    auto lock = std::lock_guard { _mutex };
    auto const it = _byDigest.find(digest);
    if (it == _byDigest.end() || it->second.empty())
        throw Error(ErrorCode::ReplayMiss, fmt::format("no recorded completion for request {}", digest),
                    { canonical_json(request_summary(request)) });
    auto completion = std::move(it->second.front());
    it->second.pop_front();
    return completion;
}

RecordingBackend::RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path fixture):
    _inner(std::move(inner)), _fixture(std::move(fixture))
{
}

std::string RecordingBackend::complete(const CompletionRequest& request)
{
    auto completion = _inner->complete(request);
    auto const record = nlohmann::json {
        { "request_digest", request_digest(request) },
        { "request_summary", request_summary(request) },
        { "completion", completion },
    };
    auto lock = std::lock_guard { _mutex };
    auto out = std::ofstream(_fixture, std::ios::app);
    out << canonical_json(record) << '\n';
    out.flush();
    if (!out)
        throw Error(ErrorCode::FixtureWriteError, fmt::format("cannot append to fixture '{}'", _fixture.string()));
    return completion;
}

std::unique_ptr<RecordingBackend> record_session(std::shared_ptr<Backend> live, std::filesystem::path fixture)
{
    return std::make_unique<RecordingBackend>(std::move(live), std::move(fixture));
}

// ---------------------------------------------------------------------------
// Live HTTP

HttpChatConfig HttpChatConfig::from_env()
{
    auto env = [](const char* name) {
        auto const* value = std::getenv(name);
        return value ? std::string(value) : std::string {};
    };
    auto config = HttpChatConfig {};
    config.endpoint = env("LLM_ENDPOINT");
    config.model = env("LLM_MODEL");
    config.api_key = env("LLM_API_KEY");
    if (auto const secs = env("LLM_TIMEOUT_SECS"); !secs.empty())
    {
        try
        {
            config.timeout = std::chrono::seconds(std::stol(secs));
        }
        catch (const std::exception&)
        {
            throw Error(ErrorCode::ConfigError, fmt::format("LLM_TIMEOUT_SECS is not a number: '{}'", secs));
        }
    }
    return config;
}

namespace
{

struct Endpoint
{
    std::string origin; // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url)
{
    auto const scheme = url.find("://");
    if (scheme == std::string::npos)
        throw Error(ErrorCode::ConfigError, fmt::format("LLM endpoint must be an absolute URL, got '{}'", url));
    auto const slash = url.find('/', scheme + 3);
    if (slash == std::string::npos)
        return { url, "/" };
    return { url.substr(0, slash), url.substr(slash) };
}

bool transient(int status)
{
    return status == 429 || status >= 500;
}

} // namespace

HttpChatBackend::HttpChatBackend(HttpChatConfig config, Sleeper sleeper):
    _config(std::move(config)), _sleep(std::move(sleeper))
{
    if (_config.endpoint.empty())
        throw Error(ErrorCode::ConfigError, "live backend needs an endpoint (LLM_ENDPOINT)");
    if (_config.max_attempts < 1)
        throw Error(ErrorCode::ConfigError, "live backend needs at least one attempt");
    if (!_sleep)
        _sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

nlohmann::json HttpChatBackend::wire_body(const CompletionRequest& request) const
{
    auto messages = nlohmann::json::array();
    messages.push_back({ { "role", "system" }, { "content", request.system_prompt } });
    for (const auto& m: request.conversation)
        messages.push_back({ { "role", to_string(m.role) }, { "content", m.text } });
    auto body = nlohmann::json {
        { "messages", std::move(messages) },
        { "temperature", request.decoding.temperature },
        { "max_tokens", request.decoding.max_output_tokens },
        { "stop", request.stop_sequences },
    };
    if (!_config.model.empty())
        body["model"] = _config.model;
    return body;
}

std::string HttpChatBackend::complete(const CompletionRequest& request)
{
    using namespace std::chrono;
    auto const endpoint = split_endpoint(_config.endpoint);
    auto const body = wire_body(request).dump();
    auto headers = httplib::Headers {};
    if (!_config.api_key.empty())
        headers.emplace("Authorization", "Bearer " + _config.api_key);

    auto const started = steady_clock::now();
    auto const deadline = started + _config.timeout;
    auto backoff = _config.base_backoff;
    auto failures = std::vector<std::string> {};

    for (int attempt = 1; attempt <= _config.max_attempts; ++attempt)
    {
        auto const left = duration_cast<milliseconds>(deadline - steady_clock::now());
        if (left <= milliseconds::zero())
        {
            failures.push_back("deadline reached");
            break;
        }

        auto client = httplib::Client(endpoint.origin);
        auto const secs = duration_cast<seconds>(left).count();
        auto const usecs = duration_cast<microseconds>(left).count() % 1'000'000;
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);

        auto const response = client.Post(endpoint.path, headers, body, "application/json");
        if (!response)
        {
            failures.push_back(fmt::format("attempt {}: {}", attempt, httplib::to_string(response.error())));
        }
        else if (response->status >= 200 && response->status < 300)
        {
            try
            {
                auto const reply = nlohmann::json::parse(response->body);
                auto const& choice = reply.at("choices").at(0);
                if (choice.contains("message"))
                    return choice.at("message").at("content").get<std::string>();
                return choice.at("text").get<std::string>();
            }
            catch (const nlohmann::json::exception& e)
            {
                throw Error(ErrorCode::BackendUnavailable, "provider returned an unreadable completion", { e.what() });
            }
        }
        else if (!transient(response->status))
        {
            throw Error(ErrorCode::BackendUnavailable,
                        fmt::format("provider rejected the request with HTTP {}", response->status));
        }
        else
        {
            failures.push_back(fmt::format("attempt {}: HTTP {}", attempt, response->status));
        }

        if (attempt == _config.max_attempts)
            break;
        if (steady_clock::now() + backoff >= deadline)
        {
            failures.push_back("deadline would pass before the next attempt");
            break;
        }
        _sleep(backoff);
        backoff = duration_cast<milliseconds>(backoff * _config.backoff_factor);
    }
    throw Error(ErrorCode::BackendUnavailable, "language model backend unavailable after retries", failures);
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, std::ptrdiff_t max_concurrent):
    _backend(std::move(backend)), _slots(std::max<std::ptrdiff_t>(1, max_concurrent))
{
    if (!_backend)
        throw Error(ErrorCode::ConfigError, "gateway needs a backend");
}

std::string Gateway::complete(const CompletionRequest& request)
{
    _slots.acquire();
    struct Release
    {
        std::counting_semaphore<>& slots;
        ~Release() { slots.release(); }
    } release { _slots };
    return truncate_at_stop(_backend->complete(request), request.stop_sequences);
}

} // namespace meditool::llm
