// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <map>
#include <string>
#include <vector>

#include "fleetmon/events.hpp"

namespace fleetmon {

enum class TransformKind { EventId, Discrete };

std::string_view to_string(TransformKind k);
std::optional<TransformKind> transform_kind_from_string(std::string_view s);

struct BucketConfig {
    // velocity bucket upper limits, km/h; left-closed right-open intervals,
    // last bucket unbounded
    std::vector<double> velocity_edges{5.0, 10.0, 20.0, 50.0};
    // open-flow count thresholds: <= low_max -> low, <= medium_max -> medium
    int flows_low_max = 2;
    int flows_medium_max = 5;
    bool operator==(const BucketConfig&) const = default;
};

int bucketize_velocity(double v_kmh, const BucketConfig& cfg = {});
enum class FlowBucket : int { Low = 0, Medium = 1, High = 2 };
FlowBucket bucketize_flows(int open_flow_count, const BucketConfig& cfg = {});

// Discrete feature tuple; -1 marks attributes the event type does not carry.
struct FeatureTuple {
    int event_id = -1;
    int velocity_bucket = -1;
    int flow_bucket = -1;
    int file_type = -1;
    int access_type = -1;
    int vendor_known = -1;
    auto operator<=>(const FeatureTuple&) const = default;
};

// The bucketized view of one event. open_flow_count is the number of
// Open Flows events seen so far in the drive, including this one when it
// is itself an Open Flows event.
FeatureTuple tuple_for(const Event& e, int open_flow_count, const BucketConfig& cfg);

class Alphabet {
public:
    // EventId alphabet: fixed, symbol == event type id, M == 43.
    static Alphabet event_id();
    // Discrete alphabet: observed tuple combinations from the training
    // drives plus one reserved unknown symbol at index M-1.
    static Alphabet discrete(const BucketConfig& cfg, const std::vector<Drive>& training);

    TransformKind kind() const { return kind_; }
    const BucketConfig& buckets() const { return buckets_; }
    int size() const;
    int unknown_symbol() const;  // discrete only; throws for event_id

    int encode(const FeatureTuple& tuple) const;
    FeatureTuple decode(int symbol) const;

    std::string to_json() const;
    static Alphabet from_json(const std::string& text);

    bool operator==(const Alphabet&) const = default;

private:
    TransformKind kind_ = TransformKind::EventId;
    BucketConfig buckets_;
    std::map<FeatureTuple, int> index_;
    std::vector<FeatureTuple> tuples_;
};

// Incremental event-to-symbol encoder; owns the per-drive open-flow
// counter so streaming and batch transformation agree exactly.
class SymbolEncoder {
public:
    explicit SymbolEncoder(const Alphabet& alphabet) : alphabet_(&alphabet) {}
    int encode_next(const Event& e);
    void reset() { open_flows_ = 0; }

private:
    const Alphabet* alphabet_;
    int open_flows_ = 0;
};

struct ObservationSequence {
    std::string drive_id;
    std::vector<int> symbols;
    std::vector<double> times;
};

ObservationSequence transform_drive(const Drive& drive, const Alphabet& alphabet);
std::vector<ObservationSequence> transform_drives(const std::vector<Drive>& drives,
                                                  const Alphabet& alphabet);

}  // namespace fleetmon
