// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/transform.hpp"

#include <stdexcept>

#include <json.hpp>

namespace fleetmon {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(TransformKind k) {
    return k == TransformKind::EventId ? "event_id" : "discrete";
}

std::optional<TransformKind> transform_kind_from_string(std::string_view s) {
    if (s == "event_id") return TransformKind::EventId;
    if (s == "discrete") return TransformKind::Discrete;
    return std::nullopt;
}

int bucketize_velocity(double v_kmh, const BucketConfig& cfg) {
    if (v_kmh < 0.0) throw std::invalid_argument("negative velocity");
    int b = 0;
    for (double edge : cfg.velocity_edges) {
        if (v_kmh < edge) return b;
        ++b;
    }
    return b;
}

FlowBucket bucketize_flows(int open_flow_count, const BucketConfig& cfg) {
    if (open_flow_count <= cfg.flows_low_max) return FlowBucket::Low;
    if (open_flow_count <= cfg.flows_medium_max) return FlowBucket::Medium;
    return FlowBucket::High;
}

FeatureTuple tuple_for(const Event& e, int open_flow_count, const BucketConfig& cfg) {
    FeatureTuple t;
    t.event_id = static_cast<int>(e.type);
    t.velocity_bucket = bucketize_velocity(e.velocity, cfg);
    if (e.type == EventType::OpenFlows)
        t.flow_bucket = static_cast<int>(bucketize_flows(open_flow_count, cfg));
    if (e.attrs.file_type) t.file_type = static_cast<int>(*e.attrs.file_type);
    if (e.attrs.access_type) t.access_type = static_cast<int>(*e.attrs.access_type);
    if (e.attrs.vendor) t.vendor_known = e.attrs.vendor->known ? 1 : 0;
    return t;
}

Alphabet Alphabet::event_id() {
    Alphabet a;
    a.kind_ = TransformKind::EventId;
    return a;
}

Alphabet Alphabet::discrete(const BucketConfig& cfg, const std::vector<Drive>& training) {
    if (training.empty())
        throw std::invalid_argument("discrete alphabet needs a non-empty training set");
    Alphabet a;
    a.kind_ = TransformKind::Discrete;
    a.buckets_ = cfg;
    std::map<FeatureTuple, int> seen;
    for (const Drive& d : training) {
        int flows = 0;
        for (const Event& e : d.events) {
            if (e.type == EventType::OpenFlows) ++flows;
            seen.emplace(tuple_for(e, flows, cfg), 0);
        }
    }
    int next = 0;
    for (auto& [tuple, idx] : seen) {
        idx = next++;
        a.tuples_.push_back(tuple);
    }
    a.index_ = std::move(seen);
    return a;
}

int Alphabet::size() const {
    if (kind_ == TransformKind::EventId) return kEventTypeCount;
    return static_cast<int>(tuples_.size()) + 1;  // + unknown
}

int Alphabet::unknown_symbol() const {
    if (kind_ == TransformKind::EventId)
        throw std::logic_error("event_id alphabet has no unknown symbol");
    return static_cast<int>(tuples_.size());
}

int Alphabet::encode(const FeatureTuple& tuple) const {
    if (kind_ == TransformKind::EventId) return tuple.event_id;
    auto it = index_.find(tuple);
    if (it != index_.end()) return it->second;
    return unknown_symbol();
}

FeatureTuple Alphabet::decode(int symbol) const {
    if (kind_ == TransformKind::EventId) {
        if (symbol < 0 || symbol >= kEventTypeCount)
            throw std::out_of_range("symbol out of range");
        FeatureTuple t;
        t.event_id = symbol;
        return t;
    }
    if (symbol < 0 || symbol >= size()) throw std::out_of_range("symbol out of range");
    if (symbol == unknown_symbol())
        return FeatureTuple{};  // unknown decodes to the all-absent tuple
    return tuples_[static_cast<std::size_t>(symbol)];
}

std::string Alphabet::to_json() const {
    ordered_json j;
    j["kind"] = to_string(kind_);
    if (kind_ == TransformKind::Discrete) {
        j["buckets"] = {{"velocity_edges", buckets_.velocity_edges},
                        {"flows_low_max", buckets_.flows_low_max},
                        {"flows_medium_max", buckets_.flows_medium_max}};
        ordered_json tuples = ordered_json::array();
        for (const FeatureTuple& t : tuples_)
            tuples.push_back({t.event_id, t.velocity_bucket, t.flow_bucket, t.file_type,
                              t.access_type, t.vendor_known});
        j["tuples"] = std::move(tuples);
    }
    return j.dump();
}

Alphabet Alphabet::from_json(const std::string& text) {
    ordered_json j = ordered_json::parse(text);
    auto kind = transform_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw SchemaError("unknown transform kind");
    if (*kind == TransformKind::EventId) return event_id();
    Alphabet a;
    a.kind_ = TransformKind::Discrete;
    const auto& b = j.at("buckets");
    a.buckets_.velocity_edges = b.at("velocity_edges").get<std::vector<double>>();
    a.buckets_.flows_low_max = b.at("flows_low_max").get<int>();
    a.buckets_.flows_medium_max = b.at("flows_medium_max").get<int>();
    int next = 0;
    for (const auto& row : j.at("tuples")) {
        FeatureTuple t{row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>(),
                       row.at(3).get<int>(), row.at(4).get<int>(), row.at(5).get<int>()};
        a.tuples_.push_back(t);
        a.index_.emplace(t, next++);
    }
    return a;
}

int SymbolEncoder::encode_next(const Event& e) {
    if (e.type == EventType::OpenFlows) ++open_flows_;
    return alphabet_->encode(tuple_for(e, open_flows_, alphabet_->buckets()));
}

ObservationSequence transform_drive(const Drive& drive, const Alphabet& alphabet) {
    ObservationSequence seq;
    seq.drive_id = drive.drive_id;
    seq.symbols.reserve(drive.events.size());
    seq.times.reserve(drive.events.size());
    SymbolEncoder enc(alphabet);
    for (const Event& e : drive.events) {
        seq.symbols.push_back(enc.encode_next(e));
        seq.times.push_back(e.t);
    }
    return seq;
}

std::vector<ObservationSequence> transform_drives(const std::vector<Drive>& drives,
                                                  const Alphabet& alphabet) {
    std::vector<ObservationSequence> out;
    out.reserve(drives.size());
    for (const Drive& d : drives) out.push_back(transform_drive(d, alphabet));
    return out;
}

}  // namespace fleetmon
