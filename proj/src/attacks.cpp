// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace fleetmon::attack {

namespace {

const std::vector<std::string> kUnknownVendors = {"xq-telemetry.biz", "updsrv.info",
                                                  "cdn-relay.net"};

struct Insertion {
    std::size_t at = 0;  // events inserted before this original index
    std::vector<Event> events;
};

// Spread inserted events evenly inside the time gap before original index
// `at`, interpolating velocity and position from the neighbors.
void place_in_gap(const Drive& src, Insertion& ins) {
    const Event& prev = src.events[ins.at - 1];
    const bool has_next = ins.at < src.events.size();
    const double lo = prev.t;
    const double hi = has_next ? src.events[ins.at].t : prev.t + 2.0 * (ins.events.size() + 1);
    const double v_hi = has_next ? src.events[ins.at].velocity : prev.velocity;
    const double x_hi = has_next ? src.events[ins.at].x : prev.x;
    const auto m = ins.events.size();
    for (std::size_t j = 0; j < m; ++j) {
        const double frac = static_cast<double>(j + 1) / static_cast<double>(m + 1);
        ins.events[j].t = lo + (hi - lo) * frac;
        ins.events[j].velocity = std::max(0.0, prev.velocity + (v_hi - prev.velocity) * frac);
        ins.events[j].x = prev.x + (x_hi - prev.x) * frac;
        ins.events[j].y = prev.y;
    }
}

Drive apply_insertion(const Drive& src, const Insertion& ins, AttackKind kind,
                      std::size_t attack_index, const StorySpan* grown_span) {
    Drive out;
    out.drive_id = src.drive_id;
    out.vehicle_id = src.vehicle_id;
    out.label = std::string(to_string(kind));
    out.attack_index = attack_index;
    out.events.reserve(src.events.size() + ins.events.size());
    for (std::size_t k = 0; k < src.events.size(); ++k) {
        if (k == ins.at)
            for (const Event& e : ins.events) out.events.push_back(e);
        out.events.push_back(src.events[k]);
    }
    if (ins.at == src.events.size())
        for (const Event& e : ins.events) out.events.push_back(e);
    const std::size_t shift = ins.events.size();
    for (const StorySpan& span : src.story_trace) {
        StorySpan adjusted = span;
        if (grown_span && span == *grown_span) {
            adjusted.end += shift;
        } else if (span.begin >= ins.at) {
            adjusted.begin += shift;
            adjusted.end += shift;
        }
        out.story_trace.push_back(adjusted);
    }
    return out;
}

Event packet_event(EventType type, Rng& rng) {
    Event e;
    e.type = type;
    if (attr_schema(type).has_packets) {
        e.src_packets = rng.poisson(20.0);
        e.dst_packets = rng.poisson(20.0);
    }
    return e;
}

Event spiked_event(EventType type, Rng& rng) {
    Event e;
    e.type = type;
    e.src_packets = 40 + rng.poisson(40.0);
    e.dst_packets = 40 + rng.poisson(40.0);
    return e;
}

std::vector<const StorySpan*> spans_named(const Drive& d, std::string_view story) {
    std::vector<const StorySpan*> out;
    for (const StorySpan& span : d.story_trace)
        if (span.story == story) out.push_back(&span);
    return out;
}

const StorySpan* pick_span(const Drive& d, std::string_view story, Rng& rng, AttackKind kind) {
    auto spans = spans_named(d, story);
    if (spans.empty()) throw NoAnchorError(kind, std::string(story));
    return spans[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(spans.size()) - 1))];
}

Drive inject_out_of_order(const Drive& src, Rng& rng) {
    // candidate constraints present in this drive
    std::vector<std::pair<const StorySpan*, const OrderConstraint*>> candidates;
    for (const OrderConstraint& c : order_constraints())
        for (const StorySpan* span : spans_named(src, c.story))
            candidates.push_back({span, &c});
    if (candidates.empty()) throw NoAnchorError(AttackKind::OutOfOrder, "any constrained story");

    const auto& [span, constraint] = candidates[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];

    // move the dependent event to or before the position of its
    // prerequisite; the time grid stays fixed, payloads permute
    const std::size_t dep = span->begin + constraint->after;
    const std::size_t new_pos =
        span->begin + static_cast<std::size_t>(rng.uniform_int(
                          0, static_cast<std::int64_t>(constraint->before)));
    Drive out = src;
    out.label = std::string(to_string(AttackKind::OutOfOrder));
    out.attack_index = new_pos;
    std::vector<double> times;
    for (std::size_t k = span->begin; k < span->end; ++k) times.push_back(out.events[k].t);
    Event moved = std::move(out.events[dep]);
    out.events.erase(out.events.begin() + static_cast<std::ptrdiff_t>(dep));
    out.events.insert(out.events.begin() + static_cast<std::ptrdiff_t>(new_pos), std::move(moved));
    for (std::size_t k = span->begin; k < span->end; ++k)
        out.events[k].t = times[k - span->begin];
    return out;
}

Drive inject_usb_swap(const Drive& src, Rng& rng) {
    const StorySpan* span = pick_span(src, "Info System Upgrade", rng, AttackKind::UsbFirmwareSwap);
    // benign: insert, auth, run, access, extract
    // attacked: insert, auth, [extract, insert], run, access, extract
    Insertion ins;
    ins.at = span->begin + 2;
    ins.events.push_back(packet_event(EventType::UsbExtract, rng));
    ins.events.push_back(packet_event(EventType::UsbInsert, rng));
    place_in_gap(src, ins);
    return apply_insertion(src, ins, AttackKind::UsbFirmwareSwap, span->begin + 2, span);
}

Drive inject_unknown_vendor(const Drive& src, Rng& rng) {
    const StorySpan* span = pick_span(src, "Download Map", rng, AttackKind::UnknownVendor);
    Drive tmp = src;
    Event& oem = tmp.events[span->begin];  // OEM Communication leads the story
    oem.type = EventType::UnknownVendorCommunication;
    oem.attrs.vendor = Vendor{kUnknownVendors[static_cast<std::size_t>(rng.uniform_int(
                                  0, static_cast<std::int64_t>(kUnknownVendors.size()) - 1))],
                              false};
    Insertion ins;
    ins.at = span->begin + 1;
    ins.events.push_back(spiked_event(EventType::NetworkUsage, rng));
    Event proc = packet_event(EventType::UnknownProcessStarted, rng);
    proc.attrs.path = "/tmp/.x-" + std::to_string(rng.uniform_int(1000, 9999));
    ins.events.push_back(std::move(proc));
    place_in_gap(tmp, ins);
    const StorySpan* tmp_span = &tmp.story_trace[static_cast<std::size_t>(
        span - src.story_trace.data())];
    return apply_insertion(tmp, ins, AttackKind::UnknownVendor, span->begin, tmp_span);
}

Drive inject_ota_malicious(const Drive& src, Rng& rng) {
    const StorySpan* span = pick_span(src, "OTA Update", rng, AttackKind::OtaMalicious);
    // after Finish Firmware Update (offset 5), before Main Router Logout
    Insertion ins;
    ins.at = span->begin + 6;
    Event app = packet_event(EventType::DownloadApp, rng);
    app.attrs.app_name = "sys-update-helper";
    app.attrs.path = "/apps/sys-update-helper/pkg.bin";
    ins.events.push_back(std::move(app));
    Event exec = packet_event(EventType::ListOfNewExecOnTheEcu, rng);
    exec.attrs.app_name = "sys-update-helper";
    exec.attrs.path = "/ecu/bin/sys-update-helper";
    ins.events.push_back(std::move(exec));
    ins.events.push_back(spiked_event(EventType::AbnormalNwBehavior, rng));
    place_in_gap(src, ins);
    return apply_insertion(src, ins, AttackKind::OtaMalicious, span->begin + 6, span);
}

Drive inject_malicious_app(const Drive& src, Rng& rng) {
    const StorySpan* span = pick_span(src, "Install App", rng, AttackKind::MaliciousApp);
    Insertion ins;
    ins.at = span->end;
    Event access = packet_event(EventType::FileAccess, rng);
    access.attrs.file_type = FileType::Root;
    access.attrs.access_type = AccessType::Write;
    ins.events.push_back(std::move(access));
    ins.events.push_back(spiked_event(EventType::AbnormalOsBehavior, rng));
    ins.events.push_back(spiked_event(EventType::NetworkUsage, rng));
    place_in_gap(src, ins);
    return apply_insertion(src, ins, AttackKind::MaliciousApp, span->end, nullptr);
}

}  // namespace

std::string_view to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::OutOfOrder: return "out_of_order";
        case AttackKind::UsbFirmwareSwap: return "usb_firmware_swap";
        case AttackKind::UnknownVendor: return "unknown_vendor";
        case AttackKind::OtaMalicious: return "ota_malicious";
        case AttackKind::MaliciousApp: return "malicious_app";
    }
    return "out_of_order";
}

std::optional<AttackKind> attack_kind_from_string(std::string_view s) {
    for (AttackKind k : all_attack_kinds())
        if (to_string(k) == s) return k;
    return std::nullopt;
}

const std::vector<AttackKind>& all_attack_kinds() {
    static const std::vector<AttackKind> kinds = {
        AttackKind::OutOfOrder, AttackKind::UsbFirmwareSwap, AttackKind::UnknownVendor,
        AttackKind::OtaMalicious, AttackKind::MaliciousApp};
    return kinds;
}

const std::vector<OrderConstraint>& order_constraints() {
    static const std::vector<OrderConstraint> constraints = {
        {"Car Entry 1", 4, 5},          // alarm disarmed before ignition
        {"Car Entry 2", 9, 10},         // alarm disarmed before ignition
        {"Car Exit", 4, 5},             // doors locked before alarm arms
        {"Info System Upgrade", 1, 2},  // authentication before running the exe
        {"OTA Update", 4, 5},           // update starts before it finishes
        {"Install App", 1, 3},          // download before running the app
        {"Download Map", 3, 4},         // map process starts before loading
    };
    return constraints;
}

bool has_anchor(const Drive& drive, AttackKind kind) {
    switch (kind) {
        case AttackKind::OutOfOrder:
            for (const OrderConstraint& c : order_constraints())
                if (!spans_named(drive, c.story).empty()) return true;
            return false;
        case AttackKind::UsbFirmwareSwap:
            return !spans_named(drive, "Info System Upgrade").empty();
        case AttackKind::UnknownVendor:
            return !spans_named(drive, "Download Map").empty();
        case AttackKind::OtaMalicious:
            return !spans_named(drive, "OTA Update").empty();
        case AttackKind::MaliciousApp:
            return !spans_named(drive, "Install App").empty();
    }
    return false;
}

Drive inject_attack(const Drive& benign, AttackKind kind, Rng& rng) {
    if (!benign.is_benign()) throw std::invalid_argument("inject_attack expects a benign drive");
    switch (kind) {
        case AttackKind::OutOfOrder: return inject_out_of_order(benign, rng);
        case AttackKind::UsbFirmwareSwap: return inject_usb_swap(benign, rng);
        case AttackKind::UnknownVendor: return inject_unknown_vendor(benign, rng);
        case AttackKind::OtaMalicious: return inject_ota_malicious(benign, rng);
        case AttackKind::MaliciousApp: return inject_malicious_app(benign, rng);
    }
    throw std::invalid_argument("unknown attack kind");
}

std::vector<Drive> build_test_set(const std::vector<Drive>& benign, double mix,
                                  const std::vector<double>& kind_weights, Rng& rng) {
    if (mix < 0.0 || mix > 1.0) throw std::invalid_argument("mix must be in [0,1]");
    const auto& kinds = all_attack_kinds();
    std::vector<double> weights = kind_weights;
    if (weights.empty()) weights.assign(kinds.size(), 1.0);
    if (weights.size() != kinds.size())
        throw std::invalid_argument("kind_weights must have one entry per attack kind");

    const auto n = benign.size();
    const auto n_anom = static_cast<std::size_t>(std::lround(mix * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);

    std::deque<std::size_t> pool(order.begin(), order.end());
    std::vector<Drive> result;
    result.reserve(n);
    for (std::size_t a = 0; a < n_anom; ++a) {
        const AttackKind kind = kinds[rng.weighted_index(weights)];
        auto it = std::find_if(pool.begin(), pool.end(), [&](std::size_t idx) {
            return has_anchor(benign[idx], kind);
        });
        if (it == pool.end())
            throw NoAnchorError(kind, "any compatible drive left in the pool");
        result.push_back(inject_attack(benign[*it], kind, rng));
        pool.erase(it);
    }
    for (std::size_t idx : pool) result.push_back(benign[idx]);
    rng.shuffle(result);
    return result;
}

}  // namespace fleetmon::attack
