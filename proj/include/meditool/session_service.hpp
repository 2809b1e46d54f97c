// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sessions, turn serialization, transcripts, sources, grounding and snapshots.
// The HTTP layer in http_api.hpp is a thin mapping over this class.

#include <meditool/grounding.hpp>
#include <meditool/runtime.hpp>
#include <meditool/transcript.hpp>

#include <nlohmann/json.hpp>

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace meditool::service
{

inline constexpr std::string_view kSnapshotFile = "sessions.json";

struct ServiceOptions
{
    /// Session id source; defaults to random 16-hex-digit ids.
    std::function<std::string()> id_generator;
};

/// "s0001", "s0002", ... for reproducible runs.
std::function<std::string()> counter_ids(std::string prefix = "s");

class SessionService
{
  public:
    explicit SessionService(Runtime& runtime, ServiceOptions options = {});
    ~SessionService();

    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    std::string create_session();

    /// Runs one agent turn and returns the stored record (grounding attached
    /// when the turn completed). Throws UnknownSession, SessionClosed or
    /// SessionBusy. Backend failures are recorded in the turn, not thrown.
    agent::TurnRecord post_message(std::string_view session_id, std::string_view text);

    [[nodiscard]] agent::SessionState session(std::string_view session_id) const;

    /// Clinician view hides thoughts unless `debug` is set.
    [[nodiscard]] nlohmann::json transcript(std::string_view session_id, bool debug = false) const;

    [[nodiscard]] std::vector<tools::ProvenanceRecord> sources(std::string_view session_id,
                                                               std::optional<std::size_t> turn_index = {}) const;

    /// Defaults to the latest turn. Throws NoFinalAnswer, InvalidArgument.
    [[nodiscard]] agent::GroundingReport grounding(std::string_view session_id,
                                                   std::optional<std::size_t> turn_index = {}) const;

    [[nodiscard]] nlohmann::json tools() const;
    [[nodiscard]] nlohmann::json health() const;

    /// Marks the session closed and wipes its patient data.
    void close_session(std::string_view session_id);

    [[nodiscard]] std::vector<std::string> session_ids() const;

    /// Whole service state (sessions and ledger) as one JSON document.
    [[nodiscard]] nlohmann::json snapshot_json() const;
    /// Writes `<dir>/sessions.json` atomically (temp file + rename).
    void save_snapshot(const std::filesystem::path& dir) const;
    /// Replaces all state with the snapshot. Only valid on a fresh service.
    void restore_snapshot(const std::filesystem::path& dir);
    void restore_snapshot_json(const nlohmann::json& doc);

    /// Periodic snapshots to the configured directory on a background thread.
    void start_periodic_snapshots();
    void stop_periodic_snapshots();

    [[nodiscard]] Runtime& runtime() noexcept { return _runtime; }

  private:
    struct Entry
    {
        std::mutex turn_mutex;
        agent::SessionState state; // guarded by SessionService::_stateMutex
    };

    std::shared_ptr<Entry> find(std::string_view session_id) const;

    Runtime& _runtime;
    ServiceOptions _options;
    mutable std::shared_mutex _stateMutex;
    std::map<std::string, std::shared_ptr<Entry>, std::less<>> _sessions;
    std::vector<std::string> _order; // creation order, for deterministic snapshots

    std::mutex _snapshotMutex;
    std::condition_variable_any _snapshotWake;
    std::jthread _snapshotThread;
};

} // namespace meditool::service
