// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/http_api.hpp>

#include <fmt/format.h>
#include <httplib.h>

#include <array>
#include <charconv>
#include <regex>

namespace meditool::service
{

using nlohmann::json;

int http_status_for(ErrorCode code) noexcept
{
    switch (code)
    {
        case ErrorCode::UnknownSession:
        case ErrorCode::UnknownChunk: return 404;
        case ErrorCode::SessionBusy: return 409;
        case ErrorCode::SessionClosed: return 410;
        case ErrorCode::NoFinalAnswer: return 422;
        case ErrorCode::BackendUnavailable:
        case ErrorCode::ScriptExhausted:
        case ErrorCode::ReplayMiss:
        case ErrorCode::FixtureWriteError: return 502;
        case ErrorCode::InvalidArgument:
        case ErrorCode::ValidationFailure: return 400;
        default: return 500;
    }
}

namespace
{

json error_body(std::string_view code, std::string_view message, const std::vector<std::string>& details = {})
{
    return { { "error_code", code }, { "message", message }, { "details", details } };
}

void send(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e)
{
    send(res, http_status_for(e.code()), error_body(to_string(e.code()), e.what(), e.details()));
}

std::optional<std::size_t> turn_param(const httplib::Request& req)
{
    if (!req.has_param("turn"))
        return std::nullopt;
    auto const text = req.get_param_value("turn");
    std::size_t value = 0;
    auto const [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc {} || end != text.data() + text.size())
        throw Error(ErrorCode::InvalidArgument, fmt::format("turn must be a non-negative integer, got '{}'", text));
    return value;
}

bool debug_param(const httplib::Request& req)
{
    if (!req.has_param("debug"))
        return false;
    auto const v = req.get_param_value("debug");
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0" || v.empty())
        return false;
    throw Error(ErrorCode::InvalidArgument, fmt::format("debug must be true or false, got '{}'", v));
}

// Methods each route answers; anything else on a known path is 405 rather than 404.
std::optional<std::string_view> allowed_methods(const std::string& path)
{
    static const std::array<std::pair<std::regex, std::string_view>, 6> routes { {
        { std::regex("^/sessions$"), "POST" },
        { std::regex("^/sessions/[^/]+$"), "DELETE" },
        { std::regex("^/sessions/[^/]+/messages$"), "POST" },
        { std::regex("^/sessions/[^/]+/(transcript|sources|grounding)$"), "GET" },
        { std::regex("^/tools$"), "GET" },
        { std::regex("^/health$"), "GET" },
    } };
    for (const auto& [re, methods]: routes)
        if (std::regex_match(path, re))
            return methods;
    return std::nullopt;
}

template <typename F>
void guarded(httplib::Response& res, F&& body)
{
    try
    {
        body();
    }
    catch (const Error& e)
    {
        send_error(res, e);
    }
    catch (const std::exception& e)
    {
        send(res, 500, error_body("InternalError", e.what()));
    }
}

} // namespace

HttpApi::HttpApi(SessionService& service): _service(service), _server(std::make_unique<httplib::Server>())
{
    auto& s = *_server;

    s.Post("/sessions", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            auto const id = _service.create_session();
            auto const state = _service.session(id);
            send(res, 201, { { "session_id", id }, { "created_at", state.created_at }, { "status", "open" } });
        });
    });

    s.Post("/sessions/:id/messages", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto const& id = req.path_params.at("id");
            auto body = json {};
            try
            {
                body = json::parse(req.body);
            }
            catch (const json::exception& e)
            {
                throw Error(ErrorCode::InvalidArgument, "request body must be JSON", { e.what() });
            }
            if (!body.is_object() || !body.contains("text") || !body["text"].is_string()
                || body["text"].get_ref<const std::string&>().empty())
                throw Error(ErrorCode::InvalidArgument, "request body must be {\"text\": \"<non-empty message>\"}");

            auto const turn = _service.post_message(id, body["text"].get<std::string>());
            auto out = agent::to_json(turn, false);
            out["session_id"] = id;
            if (auto const& failure = turn.outcome.backend_failure)
            {
                auto details = failure->details;
                details.push_back(fmt::format("turn_index={}", turn.turn_index));
                send(res, 502, error_body(failure->error_code, failure->message, details));
                return;
            }
            send(res, 200, out);
        });
    });

    s.Get("/sessions/:id/transcript", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send(res, 200, _service.transcript(req.path_params.at("id"), debug_param(req))); });
    });

    s.Get("/sessions/:id/sources", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto const& id = req.path_params.at("id");
            auto const turn = turn_param(req);
            auto records = json::array();
            for (const auto& r: _service.sources(id, turn))
            {
                auto rj = tools::to_json(r);
                rj["digest_verified"] = r.verify();
                records.push_back(std::move(rj));
            }
            auto out = json { { "session_id", id }, { "records", std::move(records) } };
            out["turn"] = turn ? json(*turn) : json(nullptr);
            send(res, 200, out);
        });
    });

    s.Get("/sessions/:id/grounding", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto out = agent::to_json(_service.grounding(req.path_params.at("id"), turn_param(req)));
            out["session_id"] = req.path_params.at("id");
            send(res, 200, out);
        });
    });

    s.Delete("/sessions/:id", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto const& id = req.path_params.at("id");
            _service.close_session(id);
            send(res, 200, { { "session_id", id }, { "status", "closed" } });
        });
    });

    s.Get("/tools", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send(res, 200, _service.tools()); });
    });

    s.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send(res, 200, _service.health()); });
    });

    s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty())
            return;
        if (res.status != 404 && res.status != 405)
            return;
        if (auto allowed = allowed_methods(req.path))
        {
            send(res, 405, error_body("MethodNotAllowed", fmt::format("{} is not allowed on {}", req.method, req.path),
                                      { fmt::format("allowed: {}", *allowed) }));
            res.set_header("Allow", std::string(*allowed));
        }
        else
            send(res, 404, error_body("NotFound", fmt::format("no route for {} {}", req.method, req.path)));
    });
}

HttpApi::~HttpApi()
{
    stop();
}

bool HttpApi::listen(const std::string& host, int port)
{
    return _server->listen(host, port);
}

int HttpApi::bind_to_any_port(const std::string& host)
{
    return _server->bind_to_any_port(host);
}

bool HttpApi::listen_after_bind()
{
    return _server->listen_after_bind();
}

void HttpApi::stop()
{
    if (_server)
        _server->stop();
}

void HttpApi::wait_until_ready() const
{
    _server->wait_until_ready();
}

} // namespace meditool::service
