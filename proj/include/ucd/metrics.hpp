#pragma once

#include <array>
#include <limits>
#include <optional>

#include "ucd/geometry.hpp"

namespace ucd {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Default braking rate for the proportion of stopping distance.
inline constexpr double kDefaultPsdDeceleration = 5.5;

struct MetricSample {
  double time = 0.0;
  double value = 0.0;  // may be +infinity
  bool defined = true;
};

// Vehicle footprint: rectangle of length x width centred on the vehicle
// position and aligned with its heading.
struct OrientedBox {
  Vec2 centre;
  Vec2 axis{1.0, 0.0};  // unit, along length
  double half_length = 0.0;
  double half_width = 0.0;

  Vec2 lateral() const { return {-axis.y, axis.x}; }
  std::array<Vec2, 4> corners() const;
  // Support function: max over the box of dot(n, p - centre).
  double support(Vec2 n) const;
};

OrientedBox footprint(const VehicleState& state);

// Separating-axis test; touching boxes count as overlapping.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

struct BoxGap {
  double distance = 0.0;  // 0 when overlapping
  Vec2 direction;         // unit, from a toward b along the minimal separation
};

BoxGap box_gap(const OrientedBox& a, const OrientedBox& b);

// Bounding-box gap between two vehicles.
double bounding_box_gap(const VehicleState& a, const VehicleState& b);

// Time derivative of the bounding-box gap under constant velocities.
// Zero for overlapping boxes.
double gap_rate(const VehicleState& ego, const VehicleState& target);

bool is_approaching(const VehicleState& ego, const VehicleState& target);

// Two-dimensional time-to-collision: first t >= 0 at which the two footprints,
// translated with constant velocities, touch. +infinity when they never do;
// 0 when already overlapping. Throws MetricError for a zero-size footprint.
double ttc_2d(const VehicleState& ego, const VehicleState& target);

// Deceleration rate to avoid a crash, |dv|^2 / (2 gap), when approaching;
// 0 otherwise. Throws MetricError("overlapping boxes") when gap <= 0.
double drac(const VehicleState& ego, const VehicleState& target);

// Proportion of stopping distance: gap / (v_follower^2 / (2 dec)).
// nullopt when the follower is at rest.
std::optional<double> psd(const VehicleState& follower, const VehicleState& leader,
                          double dec = kDefaultPsdDeceleration);

// PSD with the follower resolved from the pair: the ego follows when the target
// centre lies ahead of it, otherwise the target follows.
std::optional<double> psd_pair(const VehicleState& ego, const VehicleState& target,
                               double dec = kDefaultPsdDeceleration);

struct PetResult {
  double value = 0.0;    // s
  bool overlap = false;  // second vehicle entered before the first left
};

// Post-encroachment time from the first vehicle's exit time and the second
// vehicle's entry time of a shared conflict area.
PetResult pet(double exit_time_first, double entry_time_second);

}  // namespace ucd
