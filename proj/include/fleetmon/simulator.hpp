// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fleetmon/events.hpp"
#include "fleetmon/rng.hpp"

namespace fleetmon::sim {

// Per-kind insertion probabilities. All but drive_cancellation apply per
// story boundary; drive_cancellation applies once per drive.
struct NoiseConfig {
    double network_usage = 0.08;
    double open_flows = 0.08;
    double bluetooth = 0.05;
    double usb_insert = 0.05;
    double ports = 0.06;
    double file_access = 0.08;
    double music = 0.04;
    double drive_cancellation = 0.02;
};

NoiseConfig noise_profile(std::string_view name);  // "default" | "quiet" | "heavy"

struct SimConfig {
    int n_vehicles = 50;
    int n_drives = 1000;
    std::uint64_t seed = 0;
    double duration_min = 120.0;  // seconds
    double duration_max = 480.0;
    double story_rate = 2.0;  // mean stories per minute
    double cruise_min = 26.0;  // km/h, city speed band for moving segments
    double cruise_max = 45.0;
    // weights over the interior story catalog; empty means uniform
    std::vector<double> story_weights;
    NoiseConfig noise;
};

// Interior stories eligible between entry and exit, in catalog order.
const std::vector<std::string>& interior_story_names();

std::vector<Drive> generate_fleet(const SimConfig& config);
Drive generate_drive(const SimConfig& config, const std::string& vehicle_id,
                     const std::string& drive_id, Rng& rng);
Drive inject_noise(const Drive& drive, const NoiseConfig& noise, Rng& rng);

}  // namespace fleetmon::sim
