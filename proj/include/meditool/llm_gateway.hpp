// SPDX-License-Identifier: Apache-2.0
#pragma once

// Completion interface over interchangeable backends: a live chat-completion
// HTTP endpoint, a scripted backend for tests and scenarios, and record/replay
// of live traffic through line-delimited fixture files.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace meditool::llm
{

enum class Role
{
    User,
    Assistant,
};

std::string_view to_string(Role role) noexcept;

struct Message
{
    Role role = Role::User;
    std::string text;

    friend bool operator==(const Message&, const Message&) = default;
};

struct DecodingParams
{
    double temperature = 0.0;
    int max_output_tokens = 1024;

    friend bool operator==(const DecodingParams&, const DecodingParams&) = default;
};

struct CompletionRequest
{
    std::string system_prompt;
    std::vector<Message> conversation;
    std::vector<std::string> stop_sequences;
    DecodingParams decoding;
};

nlohmann::json to_json(const CompletionRequest& request);

/// sha256 over the canonical JSON form; stable across processes.
std::string request_digest(const CompletionRequest& request);

/// Short, secret-free description stored next to fixture records.
nlohmann::json request_summary(const CompletionRequest& request);

/// Cuts `text` at the earliest occurrence of any stop sequence.
std::string truncate_at_stop(std::string text, std::span<const std::string> stop_sequences);

class Backend
{
  public:
    virtual ~Backend() = default;
    virtual std::string complete(const CompletionRequest& request) = 0;
    [[nodiscard]] virtual std::string_view name() const noexcept = 0;
    [[nodiscard]] virtual bool is_live() const noexcept { return false; }
};

struct ScriptRule
{
    std::optional<std::string> user_contains; // substring of the latest user message
    std::optional<std::size_t> call_index;    // 0-based backend call number
    std::string completion;
};

/// Canned completions. Sequential scripts are consumed in order; rule scripts
/// use each rule at most once, first match wins. Running out is ScriptExhausted.
class ScriptedBackend: public Backend
{
  public:
    explicit ScriptedBackend(std::vector<std::string> completions);
    explicit ScriptedBackend(std::vector<ScriptRule> rules);

    /// Array of strings, or array of {completion, user_contains?, call_index?}.
    static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& script);

    std::string complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string_view name() const noexcept override { return "scripted"; }

    [[nodiscard]] std::size_t calls() const;
    [[nodiscard]] std::size_t remaining() const;

  private:
    mutable std::mutex _mutex;
    std::vector<ScriptRule> _rules;
    std::vector<bool> _used;
    bool _sequential = true;
    std::size_t _next = 0;
    std::size_t _calls = 0;
};

/// Serves completions from a fixture file, matching on request digest. Equal
/// digests are answered in recorded order.
class ReplayBackend: public Backend
{
  public:
    explicit ReplayBackend(const std::filesystem::path& fixture);

    std::string complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string_view name() const noexcept override { return "replay"; }

  private:
    std::mutex _mutex;
    std::map<std::string, std::deque<std::string>, std::less<>> _byDigest;
};

/// Forwards to a wrapped backend and appends every exchange to a fixture file.
class RecordingBackend: public Backend
{
  public:
    RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path fixture);

    std::string complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string_view name() const noexcept override { return "recording"; }
    [[nodiscard]] bool is_live() const noexcept override { return _inner->is_live(); }

  private:
    std::shared_ptr<Backend> _inner;
    std::filesystem::path _fixture;
    std::mutex _mutex;
};

std::unique_ptr<RecordingBackend> record_session(std::shared_ptr<Backend> live, std::filesystem::path fixture);

struct HttpChatConfig
{
    std::string endpoint; // full URL, e.g. https://api.example.com/v1/chat/completions
    std::string model;
    std::string api_key;
    std::chrono::seconds timeout { 60 };        // whole call, including retries
    std::chrono::milliseconds base_backoff { 1000 };
    double backoff_factor = 2.0;
    int max_attempts = 3;

    /// LLM_ENDPOINT, LLM_MODEL, LLM_API_KEY, LLM_TIMEOUT_SECS.
    static HttpChatConfig from_env();
};

/// OpenAI-style chat completion over HTTP(S). Connection failures, 429 and
/// 5xx responses are retried with exponential backoff.
class HttpChatBackend: public Backend
{
  public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit HttpChatBackend(HttpChatConfig config, Sleeper sleeper = {});

    std::string complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string_view name() const noexcept override { return "live"; }
    [[nodiscard]] bool is_live() const noexcept override { return true; }

    /// Provider request body; never contains the API key.
    [[nodiscard]] nlohmann::json wire_body(const CompletionRequest& request) const;

  private:
    HttpChatConfig _config;
    Sleeper _sleep;
};

/// Front door used by the engine: bounds concurrent requests and applies stop
/// sequence truncation uniformly, whatever the backend.
class Gateway
{
  public:
    explicit Gateway(std::shared_ptr<Backend> backend, std::ptrdiff_t max_concurrent = 8);

    std::string complete(const CompletionRequest& request);

    [[nodiscard]] Backend& backend() noexcept { return *_backend; }
    [[nodiscard]] const Backend& backend() const noexcept { return *_backend; }

  private:
    std::shared_ptr<Backend> _backend;
    std::counting_semaphore<> _slots;
};

} // namespace meditool::llm
