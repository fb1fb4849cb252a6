// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fleetmon/detector.hpp"

namespace fleetmon::fleetd {

struct Alert {
    std::uint64_t seq = 0;
    std::string vehicle_id;
    std::string drive_id;
    std::size_t event_index = 0;
    double residual = 0.0;
    double tau = 0.0;
    double t = 0.0;  // drive-relative event time
    std::string technique = "regression";

    std::string to_json() const;
    static Alert from_json(const std::string& line);
};

// One event on the wire. start opens a drive session; end (or a Logout
// event) finalizes it.
struct WireRecord {
    std::string drive_id;
    bool start = false;
    bool end = false;
    Event event;

    std::string to_json() const;
    static WireRecord from_json(const std::string& line);
};

struct IngestResponse {
    bool ok = false;
    std::string error;
    std::optional<std::size_t> index;
    std::optional<double> residual;
    std::optional<Alert> alert;
    std::optional<double> offline_score;     // set when the drive finalizes
    std::optional<bool> offline_anomalous;

    std::string to_json() const;
};

// Per-vehicle online scoring over registered detector bundles, with a
// durable alert log. Bundles and alerts live under store_dir and survive
// restarts. Distinct vehicles may be driven from distinct threads; events
// of one vehicle must arrive in order.
class FleetService {
public:
    explicit FleetService(std::string store_dir);
    ~FleetService();

    FleetService(const FleetService&) = delete;
    FleetService& operator=(const FleetService&) = delete;

    // Validates, persists and atomically swaps the vehicle's bundle. An
    // in-flight drive keeps scoring against the bundle it started with.
    void register_model(const std::string& vehicle_id, const std::string& bundle_json);

    IngestResponse ingest(const std::string& vehicle_id, const WireRecord& record);

    std::vector<Alert> alerts_since(std::uint64_t seq) const;
    std::size_t vehicle_count() const;
    std::size_t alert_count() const;
    const std::string& store_dir() const { return store_dir_; }

private:
    struct Session {
        std::string drive_id;
        std::shared_ptr<const detect::DetectorBundle> bundle;
        SymbolEncoder encoder;
        detect::OnlineScorer scorer;
        double last_t = -1.0;
    };

    struct VehicleState {
        std::shared_ptr<const detect::DetectorBundle> bundle;
        std::unique_ptr<Session> session;
        std::mutex mutex;
    };

    VehicleState* find_vehicle(const std::string& vehicle_id);
    Alert append_alert(Alert alert);  // assigns seq, persists durably
    void load_store();

    std::string store_dir_;
    mutable std::mutex registry_mutex_;
    std::map<std::string, std::unique_ptr<VehicleState>> vehicles_;

    mutable std::mutex alerts_mutex_;
    std::vector<Alert> alerts_;
    std::uint64_t next_alert_seq_ = 1;
    FILE* alert_log_ = nullptr;
};

bool valid_vehicle_id(const std::string& id);

}  // namespace fleetmon::fleetd
