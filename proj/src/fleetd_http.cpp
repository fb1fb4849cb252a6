// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/fleetd_http.hpp"

#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace fleetmon::fleetd {

struct HttpServer::Impl {
    FleetService* service = nullptr;
    httplib::Server server;
    int bound_port = -1;
};

HttpServer::HttpServer(FleetService& service) : impl_(std::make_unique<Impl>()) {
    impl_->service = &service;
    auto& srv = impl_->server;
    FleetService* svc = impl_->service;

    srv.Post(R"(/vehicles/([A-Za-z0-9._-]+)/model)",
             [svc](const httplib::Request& req, httplib::Response& res) {
                 const std::string vehicle_id = req.matches[1];
                 try {
                     svc->register_model(vehicle_id, req.body);
                     res.set_content("{\"ok\":true}", "application/json");
                 } catch (const DatasetError& e) {
                     res.status = 400;
                     nlohmann::json err = {{"ok", false}, {"error", e.what()}};
                     res.set_content(err.dump(), "application/json");
                 }
             });

    srv.Post(R"(/vehicles/([A-Za-z0-9._-]+)/events)",
             [svc](const httplib::Request& req, httplib::Response& res) {
                 const std::string vehicle_id = req.matches[1];
                 std::istringstream in(req.body);
                 std::ostringstream out;
                 std::string line;
                 while (std::getline(in, line)) {
                     if (line.empty()) continue;
                     IngestResponse resp;
                     try {
                         resp = svc->ingest(vehicle_id, WireRecord::from_json(line));
                     } catch (const DatasetError& e) {
                         resp.ok = false;
                         resp.error = e.what();
                     }
                     out << resp.to_json() << '\n';
                 }
                 res.set_content(out.str(), "application/x-ndjson");
             });

    srv.Get("/alerts", [svc](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t since = 0;
        if (req.has_param("since")) {
            try {
                since = std::stoull(req.get_param_value("since"));
            } catch (const std::exception&) {
                res.status = 400;
                res.set_content("{\"ok\":false,\"error\":\"bad since parameter\"}",
                                "application/json");
                return;
            }
        }
        nlohmann::ordered_json j;
        nlohmann::ordered_json list = nlohmann::ordered_json::array();
        for (const Alert& a : svc->alerts_since(since))
            list.push_back(nlohmann::ordered_json::parse(a.to_json()));
        j["alerts"] = std::move(list);
        res.set_content(j.dump(), "application/json");
    });

    srv.Get("/health", [svc](const httplib::Request&, httplib::Response& res) {
        nlohmann::ordered_json j;
        j["ok"] = true;
        j["vehicles"] = svc->vehicle_count();
        j["alerts"] = svc->alert_count();
        res.set_content(j.dump(), "application/json");
    });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(host);
        return impl_->bound_port > 0;
    }
    if (!impl_->server.bind_to_port(host, port)) return false;
    impl_->bound_port = port;
    return true;
}

int HttpServer::port() const { return impl_->bound_port; }

bool HttpServer::serve() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace fleetmon::fleetd
