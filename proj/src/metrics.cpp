#include "ucd/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ucd/error.hpp"

namespace ucd {
namespace {

// Closest point on segment [p, q] to x.
Vec2 closest_on_segment(Vec2 x, Vec2 p, Vec2 q) {
  const Vec2 e = q - p;
  const double len2 = e.squared_norm();
  if (len2 == 0.0) return p;
  const double t = std::clamp(dot(x - p, e) / len2, 0.0, 1.0);
  return p + e * t;
}

// Candidate separating directions of two boxes: both boxes' edge normals.
std::array<Vec2, 8> separating_normals(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 al = a.lateral();
  const Vec2 bl = b.lateral();
  return {a.axis, -a.axis, al, -al, b.axis, -b.axis, bl, -bl};
}

void require_size(const VehicleState& s) {
  if (!(s.length > 0.0) || !(s.width > 0.0)) throw MetricError("zero-size rectangle");
}

}  // namespace

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 l = axis * half_length;
  const Vec2 w = lateral() * half_width;
  return {centre + l + w, centre - l + w, centre - l - w, centre + l - w};
}

double OrientedBox::support(Vec2 n) const {
  return half_length * std::abs(dot(n, axis)) + half_width * std::abs(dot(n, lateral()));
}

OrientedBox footprint(const VehicleState& state) {
  OrientedBox box;
  box.centre = state.position;
  const double n = state.heading.norm();
  box.axis = n > 0.0 ? state.heading * (1.0 / n) : Vec2{1.0, 0.0};
  box.half_length = 0.5 * state.length;
  box.half_width = 0.5 * state.width;
  return box;
}

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 d = b.centre - a.centre;
  for (const Vec2& n : separating_normals(a, b)) {
    if (dot(n, d) > a.support(n) + b.support(n)) return false;
  }
  return true;
}

BoxGap box_gap(const OrientedBox& a, const OrientedBox& b) {
  if (boxes_overlap(a, b)) return {0.0, Vec2{}};
  const auto ca = a.corners();
  const auto cb = b.corners();
  double best = kInfinity;
  Vec2 best_vec;
  auto consider = [&](Vec2 from_a, Vec2 to_b) {
    const Vec2 v = to_b - from_a;
    const double d2 = v.squared_norm();
    if (d2 < best) {
      best = d2;
      best_vec = v;
    }
  };
  for (int i = 0; i < 4; ++i) {
    const Vec2 p = ca[i], q = ca[(i + 1) % 4];
    const Vec2 r = cb[i], t = cb[(i + 1) % 4];
    for (int j = 0; j < 4; ++j) {
      consider(closest_on_segment(cb[j], p, q), cb[j]);
      consider(ca[j], closest_on_segment(ca[j], r, t));
    }
  }
  const double dist = std::sqrt(best);
  return {dist, dist > 0.0 ? best_vec * (1.0 / dist) : Vec2{}};
}

double bounding_box_gap(const VehicleState& a, const VehicleState& b) {
  return box_gap(footprint(a), footprint(b)).distance;
}

double gap_rate(const VehicleState& ego, const VehicleState& target) {
  const BoxGap g = box_gap(footprint(ego), footprint(target));
  if (g.distance == 0.0) return 0.0;
  return dot(g.direction, target.velocity - ego.velocity);
}

bool is_approaching(const VehicleState& ego, const VehicleState& target) {
  return gap_rate(ego, target) < 0.0;
}

double ttc_2d(const VehicleState& ego, const VehicleState& target) {
  require_size(ego);
  require_size(target);
  const OrientedBox a = footprint(ego);
  const OrientedBox b = footprint(target);
  // The footprints touch exactly when the centre offset lies in the Minkowski
  // sum of a and -b, i.e. inside every half-plane dot(n, d) <= h_a(n) + h_b(n)
  // over both boxes' edge normals. Clip the ray d(t) = d0 + w t against them.
  const Vec2 d0 = b.centre - a.centre;
  const Vec2 w = target.velocity - ego.velocity;
  double t_enter = 0.0;
  double t_exit = kInfinity;
  for (const Vec2& n : separating_normals(a, b)) {
    const double h = a.support(n) + b.support(n);
    const double slack = h - dot(n, d0);
    const double rate = dot(n, w);
    if (rate == 0.0) {
      if (slack < 0.0) return kInfinity;
      continue;
    }
    const double t = slack / rate;
    if (rate < 0.0) {
      t_enter = std::max(t_enter, t);
    } else {
      t_exit = std::min(t_exit, t);
    }
  }
  if (t_exit < 0.0 || t_enter > t_exit) return kInfinity;
  return t_enter;
}

double drac(const VehicleState& ego, const VehicleState& target) {
  const BoxGap g = box_gap(footprint(ego), footprint(target));
  if (!(g.distance > 0.0)) throw MetricError("overlapping boxes");
  const Vec2 dv = target.velocity - ego.velocity;
  if (!(dot(g.direction, dv) < 0.0)) return 0.0;
  return dv.squared_norm() / (2.0 * g.distance);
}

std::optional<double> psd(const VehicleState& follower, const VehicleState& leader, double dec) {
  if (!(dec > 0.0)) throw MetricError("deceleration must be positive");
  const double v = follower.speed();
  if (!(v > 0.0)) return std::nullopt;
  const double stopping = v * v / (2.0 * dec);
  return bounding_box_gap(follower, leader) / stopping;
}

std::optional<double> psd_pair(const VehicleState& ego, const VehicleState& target, double dec) {
  const bool target_ahead = dot(target.position - ego.position, ego.heading) > 0.0;
  return target_ahead ? psd(ego, target, dec) : psd(target, ego, dec);
}

PetResult pet(double exit_time_first, double entry_time_second) {
  const double gap = entry_time_second - exit_time_first;
  if (gap < 0.0) return {0.0, true};
  return {gap, false};
}

}  // namespace ucd
