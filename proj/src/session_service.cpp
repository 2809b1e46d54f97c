// SPDX-License-Identifier: Apache-2.0
#include <meditool/canonical_json.hpp>
#include <meditool/error.hpp>
#include <meditool/session_service.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>

namespace meditool::service
{

using nlohmann::json;

std::function<std::string()> counter_ids(std::string prefix)
{
    auto counter = std::make_shared<std::atomic<std::size_t>>(0);
    return [counter, prefix = std::move(prefix)] { return fmt::format("{}{:04}", prefix, ++*counter); };
}

namespace
{

std::function<std::string()> random_ids()
{
    auto rng = std::make_shared<std::mt19937_64>(std::random_device {}());
    auto mutex = std::make_shared<std::mutex>();
    return [rng, mutex] {
        auto lock = std::lock_guard { *mutex };
        return fmt::format("{:016x}", (*rng)());
    };
}

} // namespace

SessionService::SessionService(Runtime& runtime, ServiceOptions options):
    _runtime(runtime), _options(std::move(options))
{
    if (!_options.id_generator)
        _options.id_generator = random_ids();
}

SessionService::~SessionService()
{
    stop_periodic_snapshots();
}

std::shared_ptr<SessionService::Entry> SessionService::find(std::string_view session_id) const
{
    auto lock = std::shared_lock { _stateMutex };
    auto const it = _sessions.find(session_id);
    if (it == _sessions.end())
        throw Error(ErrorCode::UnknownSession, fmt::format("no session with id '{}'", session_id));
    return it->second;
}

std::string SessionService::create_session()
{
    auto entry = std::make_shared<Entry>();
    entry->state.created_at = format_timestamp(_runtime.clock()());
    auto lock = std::unique_lock { _stateMutex };
    auto id = _options.id_generator();
    while (_sessions.contains(id))
        id = _options.id_generator();
    entry->state.session_id = id;
    _sessions.emplace(id, std::move(entry));
    _order.push_back(id);
    return id;
}

agent::TurnRecord SessionService::post_message(std::string_view session_id, std::string_view text)
{
    auto entry = find(session_id);
    auto turn_lock = std::unique_lock { entry->turn_mutex, std::defer_lock };
    if (_runtime.config().busy_policy == BusyPolicy::Queue)
        turn_lock.lock();
    else if (!turn_lock.try_lock())
        throw Error(ErrorCode::SessionBusy, fmt::format("session '{}' is already running a turn", session_id));

    auto working = agent::SessionState {};
    {
        auto lock = std::shared_lock { _stateMutex };
        working = entry->state;
    }
    if (working.status == agent::SessionStatus::Closed)
        throw Error(ErrorCode::SessionClosed, fmt::format("session '{}' is closed", session_id));

    _runtime.engine().run_user_turn(working, text);
    auto& record = working.turns.back();
    if (record.outcome.status == agent::OutcomeStatus::Completed)
    {
        record.grounding = agent::verify_numeric_grounding(record);
        if (_runtime.config().grounding_blocking && !record.grounding->grounded)
        {
            auto ungrounded = std::vector<std::string> {};
            for (const auto& c: record.grounding->claims)
                if (!c.grounded)
                    ungrounded.push_back(c.text);
            record.outcome.final_text = fmt::format(
                "This answer was withheld because it states numbers that no tool issued: {}.",
                fmt::join(ungrounded, ", "));
        }
    }
    auto result = record;

    auto lock = std::unique_lock { _stateMutex };
    entry->state = std::move(working);
    return result;
}

agent::SessionState SessionService::session(std::string_view session_id) const
{
    auto entry = find(session_id);
    auto lock = std::shared_lock { _stateMutex };
    return entry->state;
}

json SessionService::transcript(std::string_view session_id, bool debug) const
{
    auto j = agent::to_json(session(session_id), debug);
    j.erase("tool_state");
    j["debug"] = debug;
    return j;
}

std::vector<tools::ProvenanceRecord> SessionService::sources(std::string_view session_id,
                                                             std::optional<std::size_t> turn_index) const
{
    auto const state = session(session_id);
    if (turn_index && *turn_index >= state.turns.size())
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("session '{}' has {} turn(s); turn {} does not exist", session_id, state.turns.size(),
                                *turn_index));
    return _runtime.registry().provenance_for(session_id, turn_index);
}

agent::GroundingReport SessionService::grounding(std::string_view session_id,
                                                 std::optional<std::size_t> turn_index) const
{
    auto const state = session(session_id);
    if (state.turns.empty())
        throw Error(ErrorCode::InvalidArgument, fmt::format("session '{}' has no turns yet", session_id));
    auto const index = turn_index.value_or(state.turns.size() - 1);
    return agent::verify_numeric_grounding(state, index);
}

json SessionService::tools() const
{
    return _runtime.registry().manifest();
}

json SessionService::health() const
{
    auto lock = std::shared_lock { _stateMutex };
    return {
        { "status", "ok" },
        { "sessions", _sessions.size() },
        { "tools", _runtime.registry().tool_names() },
        { "backend", _runtime.gateway().backend().name() },
        { "provenance_records", _runtime.registry().ledger().size() },
    };
}

void SessionService::close_session(std::string_view session_id)
{
    auto entry = find(session_id);
    auto turn_lock = std::lock_guard { entry->turn_mutex };
    auto lock = std::unique_lock { _stateMutex };
    entry->state.status = agent::SessionStatus::Closed;
    entry->state.tool_state = json::object();
}

std::vector<std::string> SessionService::session_ids() const
{
    auto lock = std::shared_lock { _stateMutex };
    return _order;
}

json SessionService::snapshot_json() const
{
    auto sessions = json::array();
    {
        auto lock = std::shared_lock { _stateMutex };
        for (const auto& id: _order)
            sessions.push_back(agent::to_json(_sessions.at(id)->state));
    }
    auto ledger = json::array();
    for (const auto& record: _runtime.registry().ledger().all())
        ledger.push_back(tools::to_json(record));
    return { { "format", "meditool-snapshot" }, { "version", 1 }, { "sessions", std::move(sessions) },
             { "ledger", std::move(ledger) } };
}

void SessionService::save_snapshot(const std::filesystem::path& dir) const
{
    std::filesystem::create_directories(dir);
    auto const target = dir / kSnapshotFile;
    auto const temp = dir / (std::string(kSnapshotFile) + ".tmp");
    {
        auto out = std::ofstream(temp, std::ios::trunc);
        out << snapshot_json().dump(1) << '\n';
        out.flush();
        if (!out)
            throw Error(ErrorCode::ConfigError, fmt::format("cannot write snapshot '{}'", temp.string()));
    }
    std::filesystem::rename(temp, target);
}

void SessionService::restore_snapshot_json(const json& doc)
{
    if (doc.value("format", std::string {}) != "meditool-snapshot")
        throw Error(ErrorCode::ConfigError, "not a session snapshot");
    auto records = std::vector<tools::ProvenanceRecord> {};
    for (const auto& r: doc.at("ledger"))
        records.push_back(tools::provenance_from_json(r));
    for (const auto& record: records)
        if (!record.verify())
            throw Error(ErrorCode::ConfigError,
                        fmt::format("snapshot ledger record '{}' fails its digest check", record.id));

    auto lock = std::unique_lock { _stateMutex };
    if (!_sessions.empty() || _runtime.registry().ledger().size() != 0)
        throw Error(ErrorCode::ConfigError, "snapshots can only be restored into an empty service");
    for (const auto& s: doc.at("sessions"))
    {
        auto entry = std::make_shared<Entry>();
        entry->state = agent::session_from_json(s);
        _order.push_back(entry->state.session_id);
        _sessions.emplace(entry->state.session_id, std::move(entry));
    }
    _runtime.registry().ledger().restore(std::move(records));
}

void SessionService::restore_snapshot(const std::filesystem::path& dir)
{
    auto const file = dir / kSnapshotFile;
    auto in = std::ifstream(file);
    if (!in)
        throw Error(ErrorCode::ConfigError, fmt::format("cannot open snapshot '{}'", file.string()));
    try
    {
        restore_snapshot_json(json::parse(in));
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorCode::ConfigError, fmt::format("snapshot '{}' is unreadable", file.string()), { e.what() });
    }
}

void SessionService::start_periodic_snapshots()
{
    auto const dir = _runtime.config().snapshot_dir;
    if (!dir || _snapshotThread.joinable())
        return;
    auto const interval = _runtime.config().snapshot_interval;
    _snapshotThread = std::jthread([this, dir = *dir, interval](std::stop_token stop) {
        auto lock = std::unique_lock { _snapshotMutex };
        while (!stop.stop_requested())
        {
            _snapshotWake.wait_for(lock, stop, interval, [] { return false; });
            try
            {
                save_snapshot(dir);
            }
            catch (const std::exception& e)
            {
                fmt::print(stderr, "snapshot failed: {}\n", e.what());
            }
        }
    });
}

void SessionService::stop_periodic_snapshots()
{
    if (_snapshotThread.joinable())
    {
        _snapshotThread.request_stop();
        _snapshotThread.join();
    }
}

} // namespace meditool::service
