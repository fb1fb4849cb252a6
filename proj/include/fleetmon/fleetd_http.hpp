// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "fleetmon/fleetd.hpp"

namespace fleetmon::fleetd {

// HTTP front end over FleetService:
//   POST /vehicles/{id}/model   bundle JSON
//   POST /vehicles/{id}/events  newline-delimited wire records; one
//                               response line per record
//   GET  /alerts?since=N
//   GET  /health
class HttpServer {
public:
    explicit HttpServer(FleetService& service);
    ~HttpServer();

    // Binds immediately; serving runs until stop().
    bool bind(const std::string& host, int port);
    int port() const;          // resolved port (useful with port 0)
    bool serve();              // blocking
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fleetmon::fleetd
