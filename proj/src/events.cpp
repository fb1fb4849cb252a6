// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/events.hpp"

#include <array>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fleetmon {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, kEventTypeCount> kEventNames = {
    "Login",
    "Door Unlocked",
    "Door Opened",
    "Door Closed",
    "Fasten Seatbelt",
    "Alarm Disarming",
    "Ignition",
    "Release Seatbelt",
    "Engine Stop",
    "Door Locked",
    "Alarm Arming",
    "Logout",
    "USB Insert",
    "Authentication Process",
    "Running Exe File From USB",
    "USB Extract",
    "Running App",
    "Open Flows",
    "Download App",
    "List Of New Exec On The ECU",
    "Network Usage",
    "Abnormal CAN Behavior",
    "Abnormal NW Behavior",
    "Abnormal OS Behavior",
    "Main Router Login",
    "Start Download Firmware Updates",
    "Finish Download Firmware Updates",
    "Request Update",
    "Start Firmware Update",
    "Finish Firmware Update",
    "Main Router Logout",
    "Beacons",
    "OEM Communication",
    "File Access",
    "Change In Data File Size",
    "Map Process Started",
    "Loading Map",
    "Unknown Process Started",
    "Unknown Vendor Communication",
    "GPS Access",
    "Open Ports",
    "Bluetooth Device Connected",
    "Bluetooth Device Disconnected",
};

const std::map<std::string_view, EventType>& name_index() {
    static const std::map<std::string_view, EventType> index = [] {
        std::map<std::string_view, EventType> m;
        for (int i = 0; i < kEventTypeCount; ++i)
            m.emplace(kEventNames[static_cast<std::size_t>(i)], static_cast<EventType>(i));
        return m;
    }();
    return index;
}

std::array<AttrSchema, kEventTypeCount> build_schema() {
    std::array<AttrSchema, kEventTypeCount> s{};
    auto at = [&s](EventType t) -> AttrSchema& {
        return s[static_cast<std::size_t>(static_cast<int>(t))];
    };

    // Mechanical door/belt/alarm events carry no packet counters.
    for (int i = 0; i < kEventTypeCount; ++i) s[static_cast<std::size_t>(i)].has_packets = true;
    for (EventType t : {EventType::DoorUnlocked, EventType::DoorOpened, EventType::DoorClosed,
                        EventType::FastenSeatbelt, EventType::AlarmDisarming,
                        EventType::ReleaseSeatbelt, EventType::EngineStop, EventType::AlarmArming})
        at(t).has_packets = false;

    at(EventType::RunningExeFileFromUsb).file_type = true;
    at(EventType::DownloadApp).app_name = true;
    at(EventType::DownloadApp).path = true;
    at(EventType::ListOfNewExecOnTheEcu).app_name = true;
    at(EventType::ListOfNewExecOnTheEcu).path = true;
    at(EventType::OemCommunication).vendor = true;
    at(EventType::FileAccess).file_type = true;
    at(EventType::FileAccess).access_type = true;
    at(EventType::ChangeInDataFileSize).file_type = true;
    at(EventType::ChangeInDataFileSize).path = true;
    at(EventType::LoadingMap).path = true;
    at(EventType::UnknownProcessStarted).path = true;
    at(EventType::UnknownVendorCommunication).vendor = true;
    at(EventType::OpenPorts).ports = true;
    at(EventType::BluetoothDeviceConnected).device_id = true;
    at(EventType::BluetoothDeviceDisconnected).device_id = true;
    // Open Flows records which server the flow talks to and how urgent it is.
    at(EventType::OpenFlows).target_ip = true;
    at(EventType::OpenFlows).priority = true;
    return s;
}

template <typename T>
bool check_attr(const std::optional<T>& value, bool expected, std::string_view attr_name,
                std::size_t index, std::vector<Violation>& out) {
    if (value.has_value() && !expected) {
        out.push_back({static_cast<std::ptrdiff_t>(index), "unexpected attribute",
                       std::string(attr_name)});
        return false;
    }
    if (!value.has_value() && expected) {
        out.push_back({static_cast<std::ptrdiff_t>(index), "missing attribute",
                       std::string(attr_name)});
        return false;
    }
    return true;
}

ordered_json attrs_to_json(const EventAttrs& a) {
    ordered_json j = ordered_json::object();
    if (a.file_type) j["file_type"] = to_string(*a.file_type);
    if (a.access_type) j["access_type"] = to_string(*a.access_type);
    if (a.app_name) j["app_name"] = *a.app_name;
    if (a.path) j["path"] = *a.path;
    if (a.vendor) j["vendor"] = {{"name", a.vendor->name}, {"known", a.vendor->known}};
    if (a.device_id) j["device_id"] = *a.device_id;
    if (a.ports) j["ports"] = *a.ports;
    if (a.priority) j["priority"] = to_string(*a.priority);
    if (a.target_ip) j["target_ip"] = *a.target_ip;
    return j;
}

[[noreturn]] void fail_parse(std::size_t line_number, const std::string& what) {
    std::ostringstream os;
    os << "line " << line_number << ": " << what;
    throw ParseError(os.str());
}

[[noreturn]] void fail_schema(std::size_t line_number, const std::string& what) {
    std::ostringstream os;
    os << "line " << line_number << ": " << what;
    throw SchemaError(os.str());
}

EventAttrs attrs_from_json(const ordered_json& j, std::size_t line_number) {
    EventAttrs a;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const auto& v = it.value();
        if (key == "file_type") {
            auto ft = file_type_from_string(v.get<std::string>());
            if (!ft) fail_schema(line_number, "unknown file_type '" + v.get<std::string>() + "'");
            a.file_type = *ft;
        } else if (key == "access_type") {
            auto at = access_type_from_string(v.get<std::string>());
            if (!at) fail_schema(line_number, "unknown access_type '" + v.get<std::string>() + "'");
            a.access_type = *at;
        } else if (key == "app_name") {
            a.app_name = v.get<std::string>();
        } else if (key == "path") {
            a.path = v.get<std::string>();
        } else if (key == "vendor") {
            a.vendor = Vendor{v.at("name").get<std::string>(), v.at("known").get<bool>()};
        } else if (key == "device_id") {
            a.device_id = v.get<std::string>();
        } else if (key == "ports") {
            a.ports = v.get<std::vector<int>>();
        } else if (key == "priority") {
            auto p = priority_from_string(v.get<std::string>());
            if (!p) fail_schema(line_number, "unknown priority '" + v.get<std::string>() + "'");
            a.priority = *p;
        } else if (key == "target_ip") {
            a.target_ip = v.get<std::string>();
        } else {
            fail_schema(line_number, "unknown attribute key '" + key + "'");
        }
    }
    return a;
}

}  // namespace

std::string_view event_type_name(EventType t) {
    return kEventNames.at(static_cast<std::size_t>(static_cast<int>(t)));
}

std::optional<EventType> event_type_from_name(std::string_view name) {
    auto it = name_index().find(name);
    if (it == name_index().end()) return std::nullopt;
    return it->second;
}

std::string_view to_string(FileType v) {
    switch (v) {
        case FileType::Public: return "public";
        case FileType::Protected: return "protected";
        case FileType::Root: return "root";
    }
    return "public";
}

std::string_view to_string(AccessType v) {
    switch (v) {
        case AccessType::Read: return "read";
        case AccessType::Write: return "write";
        case AccessType::Execute: return "execute";
    }
    return "read";
}

std::string_view to_string(Priority v) {
    switch (v) {
        case Priority::Low: return "low";
        case Priority::Medium: return "medium";
        case Priority::High: return "high";
    }
    return "low";
}

std::optional<FileType> file_type_from_string(std::string_view s) {
    if (s == "public") return FileType::Public;
    if (s == "protected") return FileType::Protected;
    if (s == "root") return FileType::Root;
    return std::nullopt;
}

std::optional<AccessType> access_type_from_string(std::string_view s) {
    if (s == "read") return AccessType::Read;
    if (s == "write") return AccessType::Write;
    if (s == "execute") return AccessType::Execute;
    return std::nullopt;
}

std::optional<Priority> priority_from_string(std::string_view s) {
    if (s == "low") return Priority::Low;
    if (s == "medium") return Priority::Medium;
    if (s == "high") return Priority::High;
    return std::nullopt;
}

const AttrSchema& attr_schema(EventType t) {
    static const std::array<AttrSchema, kEventTypeCount> schema = build_schema();
    return schema.at(static_cast<std::size_t>(static_cast<int>(t)));
}

const std::vector<std::string>& known_labels() {
    static const std::vector<std::string> labels = {
        std::string(kBenignLabel), "out_of_order", "usb_firmware_swap",
        "unknown_vendor",          "ota_malicious", "malicious_app",
    };
    return labels;
}

const std::vector<StoryTemplate>& story_catalog() {
    using E = EventType;
    static const std::vector<StoryTemplate> catalog = {
        {"Car Entry 1",
         {E::DoorUnlocked, E::DoorOpened, E::DoorClosed, E::FastenSeatbelt, E::AlarmDisarming,
          E::Ignition, E::Login}},
        {"Car Entry 2",
         {E::DoorUnlocked, E::DoorOpened, E::DoorClosed, E::Login, E::FastenSeatbelt,
          E::ReleaseSeatbelt, E::DoorOpened, E::DoorClosed, E::FastenSeatbelt, E::AlarmDisarming,
          E::Ignition}},
        {"Car Exit",
         {E::EngineStop, E::ReleaseSeatbelt, E::DoorOpened, E::DoorClosed, E::DoorLocked,
          E::AlarmArming, E::Logout}},
        {"Drive Cancellation 1", {E::DoorUnlocked, E::DoorOpened, E::DoorClosed, E::DoorLocked}},
        {"Drive Cancellation 2",
         {E::DoorUnlocked, E::DoorOpened, E::DoorClosed, E::AlarmDisarming, E::DoorOpened,
          E::DoorClosed, E::DoorLocked, E::AlarmArming}},
        {"Info System Upgrade",
         {E::UsbInsert, E::AuthenticationProcess, E::RunningExeFileFromUsb, E::FileAccess,
          E::UsbExtract}},
        {"OTA Update",
         {E::MainRouterLogin, E::StartDownloadFirmwareUpdates, E::FinishDownloadFirmwareUpdates,
          E::RequestUpdate, E::StartFirmwareUpdate, E::FinishFirmwareUpdate, E::MainRouterLogout}},
        {"Play Music", {E::RunningApp, E::OpenFlows, E::NetworkUsage}},
        {"Install App",
         {E::OpenFlows, E::DownloadApp, E::FileAccess, E::RunningApp, E::ListOfNewExecOnTheEcu}},
        {"Download Map",
         {E::OemCommunication, E::FileAccess, E::ChangeInDataFileSize, E::MapProcessStarted,
          E::LoadingMap}},
        {"Music From USB 1", {E::UsbInsert, E::FileAccess, E::UsbExtract}},
        {"Music From USB 2",
         {E::UsbInsert, E::UsbExtract, E::UsbInsert, E::FileAccess, E::UsbExtract}},
        {"Music From USB 3", {E::UsbInsert, E::UsbExtract, E::UsbInsert, E::UsbExtract}},
        {"Music From Mobile",
         {E::BluetoothDeviceConnected, E::FileAccess, E::BluetoothDeviceDisconnected}},
        {"Connected Device", {E::BluetoothDeviceConnected}},
        {"Open Flows GPS", {E::OpenFlows}},
        {"Open Flows Weather", {E::OpenFlows}},
        {"GPS", {E::GpsAccess}},
        {"Open Ports", {E::OpenPorts}},
    };
    return catalog;
}

const StoryTemplate* find_story(std::string_view name) {
    for (const auto& s : story_catalog())
        if (s.name == name) return &s;
    return nullptr;
}

std::vector<Violation> validate_drive(const Drive& drive) {
    std::vector<Violation> out;
    const auto n = drive.events.size();

    for (std::size_t i = 0; i < n; ++i) {
        const Event& e = drive.events[i];
        const auto idx = static_cast<std::ptrdiff_t>(i);
        if (!(e.t >= 0.0)) out.push_back({idx, "negative time", std::to_string(e.t)});
        if (i > 0 && !(e.t > drive.events[i - 1].t))
            out.push_back({idx, "non-monotonic time",
                           std::to_string(drive.events[i - 1].t) + " -> " + std::to_string(e.t)});
        if (!(e.velocity >= 0.0))
            out.push_back({idx, "negative velocity", std::to_string(e.velocity)});
        if (e.src_packets < 0 || e.dst_packets < 0)
            out.push_back({idx, "negative packet count", ""});

        const AttrSchema& s = attr_schema(e.type);
        check_attr(e.attrs.file_type, s.file_type, "file_type", i, out);
        check_attr(e.attrs.access_type, s.access_type, "access_type", i, out);
        check_attr(e.attrs.app_name, s.app_name, "app_name", i, out);
        check_attr(e.attrs.path, s.path, "path", i, out);
        check_attr(e.attrs.vendor, s.vendor, "vendor", i, out);
        check_attr(e.attrs.device_id, s.device_id, "device_id", i, out);
        check_attr(e.attrs.ports, s.ports, "ports", i, out);
        check_attr(e.attrs.priority, s.priority, "priority", i, out);
        check_attr(e.attrs.target_ip, s.target_ip, "target_ip", i, out);
        if (e.attrs.ports)
            for (int p : *e.attrs.ports)
                if (p < 0 || p > 65535)
                    out.push_back({idx, "port out of range", std::to_string(p)});
    }

    bool label_known = false;
    for (const auto& l : known_labels()) label_known = label_known || l == drive.label;
    if (!label_known) out.push_back({-1, "unknown label", drive.label});

    if (drive.is_benign()) {
        if (drive.attack_index)
            out.push_back({-1, "attack_index on benign drive", std::to_string(*drive.attack_index)});
    } else if (!drive.attack_index) {
        out.push_back({-1, "missing attack_index", drive.label});
    } else if (*drive.attack_index >= n) {
        out.push_back({-1, "attack_index out of bounds", std::to_string(*drive.attack_index)});
    }

    std::size_t prev_end = 0;
    for (const auto& span : drive.story_trace) {
        if (span.begin >= span.end || span.end > n) {
            out.push_back({-1, "story span out of bounds",
                           span.story + " [" + std::to_string(span.begin) + "," +
                               std::to_string(span.end) + ")"});
            continue;
        }
        if (span.begin < prev_end)
            out.push_back({-1, "overlapping story spans", span.story});
        prev_end = span.end;
    }
    return out;
}

namespace {

ordered_json event_to_ordered_json(const Event& e) {
    ordered_json je;
    je["type_name"] = event_type_name(e.type);
    je["t"] = e.t;
    je["x"] = e.x;
    je["y"] = e.y;
    je["velocity"] = e.velocity;
    je["src_packets"] = e.src_packets;
    je["dst_packets"] = e.dst_packets;
    if (!e.attrs.empty()) je["attrs"] = attrs_to_json(e.attrs);
    return je;
}

Event event_from_ordered_json(const ordered_json& je, std::size_t line_number) {
    Event e;
    const auto name = je.at("type_name").get<std::string>();
    auto type = event_type_from_name(name);
    if (!type) fail_schema(line_number, "unknown event name '" + name + "'");
    e.type = *type;
    e.t = je.at("t").get<double>();
    e.x = je.at("x").get<double>();
    e.y = je.at("y").get<double>();
    e.velocity = je.at("velocity").get<double>();
    e.src_packets = je.at("src_packets").get<std::int64_t>();
    e.dst_packets = je.at("dst_packets").get<std::int64_t>();
    if (je.contains("attrs")) e.attrs = attrs_from_json(je.at("attrs"), line_number);
    return e;
}

}  // namespace

std::string event_to_json(const Event& e) { return event_to_ordered_json(e).dump(); }

Event event_from_json(const std::string& text, std::size_t line_number) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail_parse(line_number, e.what());
    }
    try {
        return event_from_ordered_json(j, line_number);
    } catch (const nlohmann::json::exception& e) {
        fail_parse(line_number, e.what());
    }
}

std::string drive_to_line(const Drive& drive) {
    ordered_json j;
    j["drive_id"] = drive.drive_id;
    j["vehicle_id"] = drive.vehicle_id;
    j["label"] = drive.label;
    if (drive.attack_index)
        j["attack_index"] = *drive.attack_index;
    else
        j["attack_index"] = nullptr;
    ordered_json trace = ordered_json::array();
    for (const auto& span : drive.story_trace)
        trace.push_back({{"story", span.story}, {"begin", span.begin}, {"end", span.end}});
    j["story_trace"] = std::move(trace);
    ordered_json events = ordered_json::array();
    for (const Event& e : drive.events) events.push_back(event_to_ordered_json(e));
    j["events"] = std::move(events);
    return j.dump();
}

Drive drive_from_line(const std::string& line, std::size_t line_number) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail_parse(line_number, e.what());
    }
    try {
        Drive d;
        d.drive_id = j.at("drive_id").get<std::string>();
        d.vehicle_id = j.at("vehicle_id").get<std::string>();
        d.label = j.at("label").get<std::string>();
        if (!j.at("attack_index").is_null())
            d.attack_index = j.at("attack_index").get<std::size_t>();
        for (const auto& span : j.at("story_trace"))
            d.story_trace.push_back({span.at("story").get<std::string>(),
                                     span.at("begin").get<std::size_t>(),
                                     span.at("end").get<std::size_t>()});
        for (const auto& je : j.at("events"))
            d.events.push_back(event_from_ordered_json(je, line_number));
        return d;
    } catch (const nlohmann::json::exception& e) {
        fail_parse(line_number, e.what());
    }
}

void write_dataset(const std::vector<Drive>& drives, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot open for writing: " + path);
    for (const Drive& d : drives) out << drive_to_line(d) << '\n';
    if (!out) throw DatasetError("write failed: " + path);
}

std::vector<Drive> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open for reading: " + path);
    std::vector<Drive> drives;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        drives.push_back(drive_from_line(line, line_number));
    }
    return drives;
}

std::uint64_t dataset_digest(const std::vector<Drive>& drives) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= '\n';
        h *= 0x100000001b3ULL;
    };
    for (const Drive& d : drives) mix(drive_to_line(d));
    return h;
}

}  // namespace fleetmon
