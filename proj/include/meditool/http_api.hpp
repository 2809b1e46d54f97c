// SPDX-License-Identifier: Apache-2.0
#pragma once

// HTTP+JSON front end for SessionService. Error bodies are
// {"error_code", "message", "details"}; see docs/api.md.

#include <meditool/session_service.hpp>

#include <memory>
#include <string>

namespace httplib
{
class Server;
}

namespace meditool::service
{

int http_status_for(ErrorCode code) noexcept;

class HttpApi
{
  public:
    explicit HttpApi(SessionService& service);
    ~HttpApi();

    HttpApi(const HttpApi&) = delete;
    HttpApi& operator=(const HttpApi&) = delete;

    /// Blocks until stop().
    bool listen(const std::string& host, int port);

    /// Binds to an ephemeral port and returns it; follow with listen_after_bind().
    int bind_to_any_port(const std::string& host);
    bool listen_after_bind();

    void stop();
    void wait_until_ready() const;

  private:
    SessionService& _service;
    std::unique_ptr<httplib::Server> _server;
};

} // namespace meditool::service
