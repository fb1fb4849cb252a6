// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fleetmon/events.hpp"
#include "fleetmon/rng.hpp"

namespace fleetmon::attack {

enum class AttackKind {
    OutOfOrder,
    UsbFirmwareSwap,
    UnknownVendor,
    OtaMalicious,
    MaliciousApp,
};

std::string_view to_string(AttackKind kind);
std::optional<AttackKind> attack_kind_from_string(std::string_view s);
const std::vector<AttackKind>& all_attack_kinds();

// Thrown when a drive lacks the story an attack needs to anchor on.
class NoAnchorError : public std::runtime_error {
public:
    NoAnchorError(AttackKind kind, const std::string& missing_story)
        : std::runtime_error("no anchor story '" + missing_story + "' for attack '" +
                             std::string(to_string(kind)) + "'"),
          kind(kind),
          missing_story(missing_story) {}
    AttackKind kind;
    std::string missing_story;
};

// Order constraints over story templates: event at position `before` must
// precede the event at position `after` within the story.
struct OrderConstraint {
    std::string story;
    std::size_t before = 0;
    std::size_t after = 0;
};
const std::vector<OrderConstraint>& order_constraints();

bool has_anchor(const Drive& drive, AttackKind kind);

// Turns a benign drive into a labeled anomalous one. attack_index points
// at the first inserted or modified event; timestamps stay strictly
// increasing.
Drive inject_attack(const Drive& benign, AttackKind kind, Rng& rng);

// Attacks round(mix * n) drives of the pool, choosing kinds by weight
// (aligned with all_attack_kinds()), and returns the shuffled mixture.
std::vector<Drive> build_test_set(const std::vector<Drive>& benign, double mix,
                                  const std::vector<double>& kind_weights, Rng& rng);

}  // namespace fleetmon::attack
