// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fleetmon {

// Stable, 0-based event type ids. Order defines the id and must not change.
enum class EventType : int {
    Login = 0,
    DoorUnlocked,
    DoorOpened,
    DoorClosed,
    FastenSeatbelt,
    AlarmDisarming,
    Ignition,
    ReleaseSeatbelt,
    EngineStop,
    DoorLocked,
    AlarmArming,
    Logout,
    UsbInsert,
    AuthenticationProcess,
    RunningExeFileFromUsb,
    UsbExtract,
    RunningApp,
    OpenFlows,
    DownloadApp,
    ListOfNewExecOnTheEcu,
    NetworkUsage,
    AbnormalCanBehavior,
    AbnormalNwBehavior,
    AbnormalOsBehavior,
    MainRouterLogin,
    StartDownloadFirmwareUpdates,
    FinishDownloadFirmwareUpdates,
    RequestUpdate,
    StartFirmwareUpdate,
    FinishFirmwareUpdate,
    MainRouterLogout,
    Beacons,
    OemCommunication,
    FileAccess,
    ChangeInDataFileSize,
    MapProcessStarted,
    LoadingMap,
    UnknownProcessStarted,
    UnknownVendorCommunication,
    GpsAccess,
    OpenPorts,
    BluetoothDeviceConnected,
    BluetoothDeviceDisconnected,
};

inline constexpr int kEventTypeCount = 43;

std::string_view event_type_name(EventType t);
std::optional<EventType> event_type_from_name(std::string_view name);

enum class FileType : int { Public = 0, Protected = 1, Root = 2 };
enum class AccessType : int { Read = 0, Write = 1, Execute = 2 };
enum class Priority : int { Low = 0, Medium = 1, High = 2 };

std::string_view to_string(FileType v);
std::string_view to_string(AccessType v);
std::string_view to_string(Priority v);
std::optional<FileType> file_type_from_string(std::string_view s);
std::optional<AccessType> access_type_from_string(std::string_view s);
std::optional<Priority> priority_from_string(std::string_view s);

struct Vendor {
    std::string name;
    bool known = true;
    bool operator==(const Vendor&) const = default;
};

// Optional typed extras; which of these an event carries is fixed per
// event type (see attr_schema).
struct EventAttrs {
    std::optional<FileType> file_type;
    std::optional<AccessType> access_type;
    std::optional<std::string> app_name;
    std::optional<std::string> path;
    std::optional<Vendor> vendor;
    std::optional<std::string> device_id;
    std::optional<std::vector<int>> ports;
    std::optional<Priority> priority;
    std::optional<std::string> target_ip;

    bool empty() const {
        return !file_type && !access_type && !app_name && !path && !vendor &&
               !device_id && !ports && !priority && !target_ip;
    }
    bool operator==(const EventAttrs&) const = default;
};

struct Event {
    EventType type = EventType::Login;
    double t = 0.0;  // seconds since drive start
    double x = 0.0;  // meters along route
    double y = 0.0;
    double velocity = 0.0;  // km/h
    std::int64_t src_packets = 0;
    std::int64_t dst_packets = 0;
    EventAttrs attrs;

    bool operator==(const Event&) const = default;
};

// Half-open range [begin, end) of events belonging to one story instance.
struct StorySpan {
    std::string story;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool operator==(const StorySpan&) const = default;
};

inline constexpr std::string_view kBenignLabel = "benign";

struct Drive {
    std::string drive_id;
    std::string vehicle_id;
    std::string label{kBenignLabel};
    std::optional<std::size_t> attack_index;
    std::vector<StorySpan> story_trace;
    std::vector<Event> events;

    bool is_benign() const { return label == kBenignLabel; }
    bool operator==(const Drive&) const = default;
};

// Per-event-type attribute schema: which optional attrs the type carries
// and whether it reports packet counters at all.
struct AttrSchema {
    bool has_packets = false;
    bool file_type = false;
    bool access_type = false;
    bool app_name = false;
    bool path = false;
    bool vendor = false;
    bool device_id = false;
    bool ports = false;
    bool priority = false;
    bool target_ip = false;
};

const AttrSchema& attr_schema(EventType t);

// Known drive labels: "benign" plus the attack kind names.
const std::vector<std::string>& known_labels();

struct StoryTemplate {
    std::string name;
    std::vector<EventType> events;
};

// The full story catalog, in listing order. Entry stories first, then
// exit, cancellations and interior stories.
const std::vector<StoryTemplate>& story_catalog();
const StoryTemplate* find_story(std::string_view name);

struct Violation {
    std::ptrdiff_t event_index = -1;  // -1 for drive-level violations
    std::string rule;
    std::string detail;
};

std::vector<Violation> validate_drive(const Drive& drive);

class DatasetError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Structurally broken record (bad JSON, wrong field types).
class ParseError : public DatasetError {
    using DatasetError::DatasetError;
};
// Well-formed record with contents outside the schema (unknown event
// name, unknown enum value).
class SchemaError : public DatasetError {
    using DatasetError::DatasetError;
};

// Newline-delimited dataset, one self-describing drive record per line.
void write_dataset(const std::vector<Drive>& drives, const std::string& path);
std::vector<Drive> read_dataset(const std::string& path);

// Single-event record form, shared by the dataset format and the fleet
// service wire protocol.
std::string event_to_json(const Event& e);
Event event_from_json(const std::string& text, std::size_t line_number = 0);

std::string drive_to_line(const Drive& drive);
Drive drive_from_line(const std::string& line, std::size_t line_number = 0);

// FNV-1a over the serialized records; used as the dataset digest in
// reports.
std::uint64_t dataset_digest(const std::vector<Drive>& drives);

}  // namespace fleetmon
