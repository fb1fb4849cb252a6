// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/fleetd.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <json.hpp>

namespace fleetmon::fleetd {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string Alert::to_json() const {
    ordered_json j;
    j["seq"] = seq;
    j["vehicle_id"] = vehicle_id;
    j["drive_id"] = drive_id;
    j["event_index"] = event_index;
    j["residual"] = residual;
    j["tau"] = tau;
    j["t"] = t;
    j["technique"] = technique;
    return j.dump();
}

Alert Alert::from_json(const std::string& line) {
    ordered_json j = ordered_json::parse(line);
    Alert a;
    a.seq = j.at("seq").get<std::uint64_t>();
    a.vehicle_id = j.at("vehicle_id").get<std::string>();
    a.drive_id = j.at("drive_id").get<std::string>();
    a.event_index = j.at("event_index").get<std::size_t>();
    a.residual = j.at("residual").get<double>();
    a.tau = j.at("tau").get<double>();
    a.t = j.at("t").get<double>();
    a.technique = j.at("technique").get<std::string>();
    return a;
}

std::string WireRecord::to_json() const {
    ordered_json j;
    j["drive_id"] = drive_id;
    if (start) j["start"] = true;
    if (end) j["end"] = true;
    j["event"] = ordered_json::parse(event_to_json(event));
    return j.dump();
}

WireRecord WireRecord::from_json(const std::string& line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("wire record: ") + e.what());
    }
    WireRecord rec;
    try {
        rec.drive_id = j.at("drive_id").get<std::string>();
        if (j.contains("start")) rec.start = j.at("start").get<bool>();
        if (j.contains("end")) rec.end = j.at("end").get<bool>();
        rec.event = event_from_json(j.at("event").dump());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("wire record: ") + e.what());
    }
    return rec;
}

std::string IngestResponse::to_json() const {
    ordered_json j;
    j["ok"] = ok;
    if (!ok) j["error"] = error;
    if (index) j["index"] = *index;
    if (residual) j["residual"] = *residual;
    if (alert) j["alert"] = ordered_json::parse(alert->to_json());
    if (offline_score) {
        j["offline_score"] = *offline_score;
        j["offline_anomalous"] = *offline_anomalous;
    }
    return j.dump();
}

bool valid_vehicle_id(const std::string& id) {
    if (id.empty() || id.size() > 128) return false;
    for (char c : id)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.')
            return false;
    return true;
}

FleetService::FleetService(std::string store_dir) : store_dir_(std::move(store_dir)) {
    fs::create_directories(fs::path(store_dir_) / "vehicles");
    load_store();
    const auto alert_path = (fs::path(store_dir_) / "alerts.ndjson").string();
    alert_log_ = std::fopen(alert_path.c_str(), "ab");
    if (!alert_log_)
        throw std::runtime_error("cannot open alert log: " + alert_path + ": " +
                                 std::strerror(errno));
}

FleetService::~FleetService() {
    if (alert_log_) std::fclose(alert_log_);
}

void FleetService::load_store() {
    const fs::path vdir = fs::path(store_dir_) / "vehicles";
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(vdir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        auto state = std::make_unique<VehicleState>();
        state->bundle = std::make_shared<const detect::DetectorBundle>(
            detect::DetectorBundle::from_json(buf.str()));
        vehicles_.emplace(file.stem().string(), std::move(state));
    }

    const fs::path alert_path = fs::path(store_dir_) / "alerts.ndjson";
    if (fs::exists(alert_path)) {
        std::ifstream in(alert_path, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            alerts_.push_back(Alert::from_json(line));
            next_alert_seq_ = std::max(next_alert_seq_, alerts_.back().seq + 1);
        }
    }
}

void FleetService::register_model(const std::string& vehicle_id, const std::string& bundle_json) {
    if (!valid_vehicle_id(vehicle_id))
        throw SchemaError("invalid vehicle id: '" + vehicle_id + "'");
    auto bundle = std::make_shared<const detect::DetectorBundle>(
        detect::DetectorBundle::from_json(bundle_json));  // throws on malformed bundles

    const fs::path final_path = fs::path(store_dir_) / "vehicles" / (vehicle_id + ".json");
    const fs::path tmp_path = final_path.string() + ".tmp";
    {
        std::ofstream out(tmp_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write bundle: " + tmp_path.string());
        out << bundle_json;
    }
    fs::rename(tmp_path, final_path);

    std::lock_guard<std::mutex> lock(registry_mutex_);
    auto it = vehicles_.find(vehicle_id);
    if (it == vehicles_.end()) {
        auto state = std::make_unique<VehicleState>();
        state->bundle = std::move(bundle);
        vehicles_.emplace(vehicle_id, std::move(state));
    } else {
        std::lock_guard<std::mutex> vlock(it->second->mutex);
        it->second->bundle = std::move(bundle);  // in-flight session keeps its snapshot
    }
}

FleetService::VehicleState* FleetService::find_vehicle(const std::string& vehicle_id) {
    std::lock_guard<std::mutex> lock(registry_mutex_);
    auto it = vehicles_.find(vehicle_id);
    return it == vehicles_.end() ? nullptr : it->second.get();
}

Alert FleetService::append_alert(Alert alert) {
    std::lock_guard<std::mutex> lock(alerts_mutex_);
    alert.seq = next_alert_seq_++;
    const std::string line = alert.to_json();
    std::fwrite(line.data(), 1, line.size(), alert_log_);
    std::fputc('\n', alert_log_);
    std::fflush(alert_log_);
    ::fsync(fileno(alert_log_));  // durable before the ingest response
    alerts_.push_back(alert);
    return alert;
}

IngestResponse FleetService::ingest(const std::string& vehicle_id, const WireRecord& record) {
    IngestResponse resp;
    VehicleState* vs = find_vehicle(vehicle_id);
    if (!vs) {
        resp.error = "vehicle not registered: " + vehicle_id;
        return resp;
    }
    std::lock_guard<std::mutex> lock(vs->mutex);
    if (record.start) {
        if (vs->session) {
            resp.error = "drive in progress: " + vs->session->drive_id;
            return resp;
        }
        auto bundle = vs->bundle;
        vs->session = std::make_unique<Session>(Session{
            record.drive_id, bundle, SymbolEncoder(bundle->alphabet),
            detect::OnlineScorer(bundle->model, bundle->regressor), -1.0});
    } else if (!vs->session) {
        resp.error = "no active session";
        return resp;
    } else if (vs->session->drive_id != record.drive_id) {
        resp.error = "drive mismatch: active session is " + vs->session->drive_id;
        return resp;
    }

    Session& session = *vs->session;
    if (record.event.t <= session.last_t) {
        resp.error = "out-of-order timestamp";
        return resp;
    }

    const int symbol = session.encoder.encode_next(record.event);
    const double residual = session.scorer.step(symbol, record.event.t);
    session.last_t = record.event.t;

    resp.ok = true;
    resp.index = session.scorer.length() - 1;
    resp.residual = residual;
    const double tau = session.bundle->regressor.tau;
    if (residual < tau) {
        Alert alert;
        alert.vehicle_id = vehicle_id;
        alert.drive_id = session.drive_id;
        alert.event_index = *resp.index;
        alert.residual = residual;
        alert.tau = tau;
        alert.t = record.event.t;
        resp.alert = append_alert(std::move(alert));
    }
    if (record.end || record.event.type == EventType::Logout) {
        resp.offline_score = residual;
        resp.offline_anomalous = residual < tau;
        vs->session.reset();
    }
    return resp;
}

std::vector<Alert> FleetService::alerts_since(std::uint64_t seq) const {
    std::lock_guard<std::mutex> lock(alerts_mutex_);
    std::vector<Alert> out;
    for (const Alert& a : alerts_)
        if (a.seq > seq) out.push_back(a);
    return out;
}

std::size_t FleetService::vehicle_count() const {
    std::lock_guard<std::mutex> lock(registry_mutex_);
    return vehicles_.size();
}

std::size_t FleetService::alert_count() const {
    std::lock_guard<std::mutex> lock(alerts_mutex_);
    return alerts_.size();
}

}  // namespace fleetmon::fleetd
