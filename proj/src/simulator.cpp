// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fleetmon::sim {

namespace {

const std::vector<std::string> kKnownVendors = {"AutoMotive OEM", "MapWorks", "NaviCorp"};
const std::vector<std::string> kApps = {"WeatherNow", "TuneBox", "NaviMaps", "PodCastr",
                                        "RoadAssist"};
const std::vector<std::string> kDevices = {"phone-3f2a", "phone-77c1", "phone-b0d9",
                                           "tablet-41e8"};
const std::vector<std::string> kStreamIps = {"104.18.30.12", "151.101.1.140"};
const std::vector<int> kPortPool = {443, 4040, 5222, 7000, 8080, 9000};

constexpr const char* kGpsIp = "130.211.9.172";
constexpr const char* kWeatherIp = "46.228.47.115";
constexpr const char* kStoreIp = "34.120.8.14";

const std::vector<std::string> kMusicStories = {"Music From USB 1", "Music From USB 2",
                                                "Music From USB 3", "Music From Mobile",
                                                "Play Music"};

// Per-story-instance generation state.
struct StoryCtx {
    std::string app;
    std::string device;
    std::set<int>* open_ports = nullptr;  // per-drive
};

template <typename T>
const T& pick(const std::vector<T>& pool, Rng& rng) {
    return pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
}

bool has_delayed_last_event(const std::string& story) {
    return story == "Music From USB 1" || story == "Music From USB 2" ||
           story == "Music From USB 3" || story == "Music From Mobile";
}

Event make_story_event(EventType type, const std::string& story, StoryCtx& ctx, Rng& rng) {
    Event e;
    e.type = type;
    const AttrSchema& schema = attr_schema(type);
    if (schema.has_packets) {
        e.src_packets = rng.poisson(20.0);
        e.dst_packets = rng.poisson(20.0);
    }
    switch (type) {
        case EventType::FileAccess:
            if (story == "Info System Upgrade") {
                e.attrs.file_type = FileType::Protected;
                e.attrs.access_type = AccessType::Write;
            } else if (story == "Music From USB 1" || story == "Music From USB 2" ||
                       story == "Music From Mobile") {
                e.attrs.file_type = FileType::Public;
                e.attrs.access_type = AccessType::Read;
            } else if (story == "Install App" || story == "Download Map") {
                e.attrs.file_type = FileType::Public;
                e.attrs.access_type = AccessType::Write;
            } else {
                e.attrs.file_type =
                    rng.bernoulli(0.7) ? FileType::Public : FileType::Protected;
                const double u = rng.uniform(0.0, 1.0);
                e.attrs.access_type = u < 0.6   ? AccessType::Read
                                      : u < 0.85 ? AccessType::Write
                                                 : AccessType::Execute;
            }
            break;
        case EventType::RunningExeFileFromUsb:
            e.attrs.file_type = FileType::Protected;
            break;
        case EventType::DownloadApp:
            if (ctx.app.empty()) ctx.app = pick(kApps, rng);
            e.attrs.app_name = ctx.app;
            e.attrs.path = "/apps/" + ctx.app + "/pkg.bin";
            break;
        case EventType::ListOfNewExecOnTheEcu:
            if (ctx.app.empty()) ctx.app = pick(kApps, rng);
            e.attrs.app_name = ctx.app;
            e.attrs.path = "/ecu/bin/" + ctx.app;
            break;
        case EventType::OemCommunication:
            e.attrs.vendor = Vendor{pick(kKnownVendors, rng), true};
            break;
        case EventType::ChangeInDataFileSize:
            e.attrs.file_type = FileType::Public;
            e.attrs.path = "/maps/cache.dat";
            break;
        case EventType::LoadingMap:
            e.attrs.path = "/maps/tile-" + std::to_string(rng.uniform_int(100, 999));
            break;
        case EventType::OpenFlows:
            if (story == "Open Flows GPS") {
                e.attrs.target_ip = kGpsIp;
                e.attrs.priority = Priority::Low;
            } else if (story == "Open Flows Weather") {
                e.attrs.target_ip = kWeatherIp;
                e.attrs.priority = Priority::Low;
            } else if (story == "Play Music") {
                e.attrs.target_ip = pick(kStreamIps, rng);
                e.attrs.priority = Priority::Medium;
            } else if (story == "Install App") {
                e.attrs.target_ip = kStoreIp;
                e.attrs.priority = Priority::Low;
            } else {
                e.attrs.target_ip = pick(kStreamIps, rng);
                e.attrs.priority = Priority::Low;
            }
            break;
        case EventType::OpenPorts: {
            std::set<int>& open = *ctx.open_ports;
            for (auto it = open.begin(); it != open.end();)
                it = rng.bernoulli(0.3) ? open.erase(it) : std::next(it);
            const int n_new = static_cast<int>(rng.uniform_int(1, 3));
            for (int i = 0; i < n_new; ++i) open.insert(pick(kPortPool, rng));
            e.attrs.ports = std::vector<int>(open.begin(), open.end());
            break;
        }
        case EventType::BluetoothDeviceConnected:
            if (story == "Connected Device" && rng.bernoulli(0.2))
                ctx.device = "device-unk-" + std::to_string(rng.uniform_int(10, 99));
            else if (ctx.device.empty())
                ctx.device = pick(kDevices, rng);
            e.attrs.device_id = ctx.device;
            break;
        case EventType::BluetoothDeviceDisconnected:
            if (ctx.device.empty()) ctx.device = pick(kDevices, rng);
            e.attrs.device_id = ctx.device;
            break;
        default:
            break;
    }
    return e;
}

// Appends one story instance starting at *cursor; advances *cursor to the
// last event time.
void append_story(Drive& drive, const std::string& story, double* cursor, std::set<int>* ports,
                  Rng& rng) {
    const StoryTemplate* tmpl = find_story(story);
    if (!tmpl) throw std::logic_error("unknown story: " + story);
    StoryCtx ctx;
    ctx.open_ports = ports;
    const std::size_t begin = drive.events.size();
    for (std::size_t i = 0; i < tmpl->events.size(); ++i) {
        if (i > 0) {
            const bool delayed = has_delayed_last_event(story) && i + 1 == tmpl->events.size();
            *cursor += delayed ? rng.uniform(10.0, 60.0) : rng.uniform(0.5, 5.0);
        }
        Event e = make_story_event(tmpl->events[i], story, ctx, rng);
        e.t = *cursor;
        drive.events.push_back(std::move(e));
    }
    drive.story_trace.push_back({story, begin, drive.events.size()});
}

// Stop-and-go city profile: piecewise-linear speed waypoints between
// ignition and engine stop, with traffic stops in between.
void assign_kinematics(Drive& drive, double cruise_min_kmh, double cruise_max_kmh, Rng& rng) {
    double t_ign = -1.0, t_stop = -1.0;
    for (const Event& e : drive.events) {
        if (e.type == EventType::Ignition && t_ign < 0) t_ign = e.t;
        if (e.type == EventType::EngineStop && t_stop < 0) t_stop = e.t;
    }
    const bool moving = t_ign >= 0 && t_stop > t_ign;

    std::vector<std::pair<double, double>> waypoints;  // (t, km/h)
    if (moving) {
        waypoints.emplace_back(t_ign, 0.0);
        double t = t_ign;
        // traffic lights roughly every fourth block: one stop per four
        // segments, dealt in shuffled groups
        std::vector<int> light_deck;
        while (t < t_stop) {
            t += rng.uniform(20.0, 60.0);
            if (light_deck.empty()) {
                light_deck = {1, 0, 0, 0};
                rng.shuffle(light_deck);
            }
            const bool stop_segment = light_deck.back() == 1;
            light_deck.pop_back();
            const double v =
                stop_segment ? 0.0 : rng.uniform(cruise_min_kmh, cruise_max_kmh);
            waypoints.emplace_back(std::min(t, t_stop), v);
        }
        waypoints.emplace_back(t_stop, 0.0);
    }

    // hold the segment speed, then ramp to the next waypoint over a few
    // seconds; city cars change speed quickly relative to segment length
    constexpr double kRampSeconds = 7.0;
    auto profile = [&](double t) {
        if (!moving || t <= t_ign || t >= t_stop) return 0.0;
        for (std::size_t k = 1; k < waypoints.size(); ++k) {
            if (t <= waypoints[k].first) {
                const auto& [t0, v0] = waypoints[k - 1];
                const auto& [t1, v1] = waypoints[k];
                if (t1 <= t0) return v1;
                const double ramp = std::min(kRampSeconds, t1 - t0);
                const double ramp_start = t1 - ramp;
                if (t <= ramp_start) return v0;
                return v0 + (v1 - v0) * (t - ramp_start) / ramp;
            }
        }
        return 0.0;
    };

    for (Event& e : drive.events) {
        double v = profile(e.t);
        if (v > 0.0) v = std::max(0.0, v + rng.normal(0.0, 1.5));
        e.velocity = v;
        e.y = rng.normal(0.0, 3.0);
    }
    double x = 0.0;
    for (std::size_t i = 0; i < drive.events.size(); ++i) {
        if (i > 0) {
            const Event& prev = drive.events[i - 1];
            const Event& cur = drive.events[i];
            x += (cur.t - prev.t) * (cur.velocity + prev.velocity) / 2.0 / 3.6;
        }
        drive.events[i].x = x;
    }
}

struct NoiseGroup {
    std::string story;  // empty for untracked noise events
    std::vector<Event> events;
};

std::vector<NoiseGroup> draw_noise_groups(const NoiseConfig& cfg, std::set<int>& ports, Rng& rng) {
    std::vector<NoiseGroup> groups;
    StoryCtx ctx;
    ctx.open_ports = &ports;
    auto whole_story = [&](const std::string& name) {
        NoiseGroup g;
        g.story = name;
        StoryCtx story_ctx;
        story_ctx.open_ports = &ports;
        for (EventType type : find_story(name)->events)
            g.events.push_back(make_story_event(type, name, story_ctx, rng));
        return g;
    };

    if (rng.bernoulli(cfg.network_usage)) {
        NoiseGroup g;
        Event e = make_story_event(EventType::NetworkUsage, "", ctx, rng);
        e.src_packets = 40 + rng.poisson(40.0);
        e.dst_packets = 40 + rng.poisson(40.0);
        g.events.push_back(std::move(e));
        groups.push_back(std::move(g));
    }
    if (rng.bernoulli(cfg.open_flows))
        groups.push_back(whole_story(rng.bernoulli(0.5) ? "Open Flows GPS" : "Open Flows Weather"));
    if (rng.bernoulli(cfg.bluetooth)) {
        NoiseGroup g;
        StoryCtx bt_ctx;
        bt_ctx.open_ports = &ports;
        g.events.push_back(make_story_event(EventType::BluetoothDeviceConnected, "", bt_ctx, rng));
        g.events.push_back(
            make_story_event(EventType::BluetoothDeviceDisconnected, "", bt_ctx, rng));
        groups.push_back(std::move(g));
    }
    if (rng.bernoulli(cfg.usb_insert)) {
        NoiseGroup g;
        g.events.push_back(make_story_event(EventType::UsbInsert, "", ctx, rng));
        g.events.push_back(make_story_event(EventType::UsbExtract, "", ctx, rng));
        groups.push_back(std::move(g));
    }
    if (rng.bernoulli(cfg.ports)) groups.push_back(whole_story("Open Ports"));
    if (rng.bernoulli(cfg.file_access)) {
        NoiseGroup g;
        g.events.push_back(make_story_event(EventType::FileAccess, "", ctx, rng));
        groups.push_back(std::move(g));
    }
    if (rng.bernoulli(cfg.music)) groups.push_back(whole_story(pick(kMusicStories, rng)));
    return groups;
}

}  // namespace

NoiseConfig noise_profile(std::string_view name) {
    NoiseConfig cfg;
    if (name == "default") return cfg;
    if (name == "quiet") {
        cfg.network_usage /= 4;
        cfg.open_flows /= 4;
        cfg.bluetooth /= 4;
        cfg.usb_insert /= 4;
        cfg.ports /= 4;
        cfg.file_access /= 4;
        cfg.music /= 4;
        cfg.drive_cancellation /= 2;
        return cfg;
    }
    if (name == "heavy") {
        cfg.network_usage *= 2.5;
        cfg.open_flows *= 2.5;
        cfg.bluetooth *= 2.5;
        cfg.usb_insert *= 2.5;
        cfg.ports *= 2.5;
        cfg.file_access *= 2.5;
        cfg.music *= 2.5;
        cfg.drive_cancellation *= 2;
        return cfg;
    }
    throw std::invalid_argument("unknown noise profile: " + std::string(name));
}

const std::vector<std::string>& interior_story_names() {
    static const std::vector<std::string> names = {
        "Info System Upgrade", "OTA Update",        "Play Music",      "Install App",
        "Download Map",        "Music From USB 1",  "Music From USB 2", "Music From USB 3",
        "Music From Mobile",   "Connected Device",  "Open Flows GPS",  "Open Flows Weather",
        "GPS",                 "Open Ports",
    };
    return names;
}

Drive generate_drive(const SimConfig& config, const std::string& vehicle_id,
                     const std::string& drive_id, Rng& rng) {
    Drive d;
    d.drive_id = drive_id;
    d.vehicle_id = vehicle_id;

    std::set<int> open_ports;
    double cursor = rng.uniform(0.5, 3.0);

    if (rng.bernoulli(config.noise.drive_cancellation)) {
        append_story(d, rng.bernoulli(0.5) ? "Drive Cancellation 1" : "Drive Cancellation 2",
                     &cursor, &open_ports, rng);
        assign_kinematics(d, 0.0, 0.0, rng);
        return d;
    }

    const double duration = rng.uniform(config.duration_min, config.duration_max);
    
    const double story_gap_mean = 60.0 / std::max(config.story_rate, 1e-9);

    append_story(d, rng.bernoulli(0.5) ? "Car Entry 1" : "Car Entry 2", &cursor, &open_ports, rng);

    const auto& interior = interior_story_names();
    std::vector<double> weights = config.story_weights;
    if (weights.empty()) weights.assign(interior.size(), 1.0);
    if (weights.size() != interior.size())
        throw std::invalid_argument("story_weights must have one entry per interior story");

    // Interior stories are dealt from a weighted deck without replacement
    // (reshuffled when exhausted), so every drive exercises the activity
    // palette evenly instead of hammering a random subset.
    double min_w = 0.0;
    for (double w : weights)
        if (w > 0.0 && (min_w == 0.0 || w < min_w)) min_w = w;
    std::vector<std::size_t> deck;
    auto deal = [&]() {
        if (deck.empty()) {
            for (std::size_t s = 0; s < interior.size(); ++s) {
                const auto copies =
                    weights[s] > 0.0 ? std::max<long>(1, std::lround(weights[s] / min_w)) : 0;
                for (long c = 0; c < copies; ++c) deck.push_back(s);
            }
            rng.shuffle(deck);
        }
        const std::size_t s = deck.back();
        deck.pop_back();
        return s;
    };

    if (config.story_rate > 0.0 && min_w > 0.0) {
        for (;;) {
            const double gap = rng.exponential(story_gap_mean);
            if (cursor + gap > duration - 30.0) break;
            cursor += gap;
            append_story(d, interior[deal()], &cursor, &open_ports, rng);
        }
    }

    cursor += rng.uniform(3.0, 15.0);
    append_story(d, "Car Exit", &cursor, &open_ports, rng);
    assign_kinematics(d, config.cruise_min, config.cruise_max, rng);
    return d;
}

Drive inject_noise(const Drive& drive, const NoiseConfig& noise, Rng& rng) {
    if (!drive.is_benign()) throw std::invalid_argument("inject_noise expects a benign drive");
    if (drive.story_trace.empty() ||
        drive.story_trace.front().story.starts_with("Drive Cancellation"))
        return drive;

    // port state continues from the last Open Ports event, if any
    std::set<int> ports;
    for (const Event& e : drive.events)
        if (e.type == EventType::OpenPorts && e.attrs.ports)
            ports = std::set<int>(e.attrs.ports->begin(), e.attrs.ports->end());

    // insertion points are story boundaries: the end of every span but the last
    std::map<std::size_t, std::vector<NoiseGroup>> insertions;
    for (std::size_t s = 0; s + 1 < drive.story_trace.size(); ++s) {
        auto groups = draw_noise_groups(noise, ports, rng);
        if (!groups.empty()) insertions.emplace(drive.story_trace[s].end, std::move(groups));
    }
    if (insertions.empty()) return drive;

    Drive out;
    out.drive_id = drive.drive_id;
    out.vehicle_id = drive.vehicle_id;
    out.label = drive.label;
    out.attack_index = drive.attack_index;

    auto span_it = drive.story_trace.begin();
    for (std::size_t k = 0; k < drive.events.size(); ++k) {
        if (auto it = insertions.find(k); it != insertions.end()) {
            const Event& prev = drive.events[k - 1];
            const Event& next = drive.events[k];
            std::size_t total = 0;
            for (const auto& g : it->second) total += g.events.size();
            std::size_t j = 0;
            for (auto& g : it->second) {
                const std::size_t begin = out.events.size();
                for (Event& e : g.events) {
                    ++j;
                    const double frac = static_cast<double>(j) / static_cast<double>(total + 1);
                    e.t = prev.t + (next.t - prev.t) * frac;
                    e.velocity =
                        std::max(0.0, prev.velocity + (next.velocity - prev.velocity) * frac);
                    e.x = prev.x + (next.x - prev.x) * frac;
                    e.y = rng.normal(0.0, 3.0);
                    out.events.push_back(std::move(e));
                }
                if (!g.story.empty())
                    out.story_trace.push_back({g.story, begin, out.events.size()});
            }
        }
        while (span_it != drive.story_trace.end() && span_it->begin == k) {
            const std::size_t len = span_it->end - span_it->begin;
            out.story_trace.push_back({span_it->story, out.events.size(), out.events.size() + len});
            ++span_it;
        }
        out.events.push_back(drive.events[k]);
    }
    return out;
}

std::vector<Drive> generate_fleet(const SimConfig& config) {
    if (config.n_drives < 1) throw std::invalid_argument("n_drives must be >= 1");
    if (config.n_vehicles < 1) throw std::invalid_argument("n_vehicles must be >= 1");
    if (config.duration_min > config.duration_max)
        throw std::invalid_argument("duration_min > duration_max");
    std::vector<Drive> fleet;
    fleet.reserve(static_cast<std::size_t>(config.n_drives));
    for (int i = 0; i < config.n_drives; ++i) {
        Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(i));
        std::ostringstream vid;
        vid << "veh-" << (i % config.n_vehicles);
        std::ostringstream did;
        did << vid.str() << "-d" << i;
        Drive d = generate_drive(config, vid.str(), did.str(), rng);
        d = inject_noise(d, config.noise, rng);
        fleet.push_back(std::move(d));
    }
    return fleet;
}

}  // namespace fleetmon::sim
