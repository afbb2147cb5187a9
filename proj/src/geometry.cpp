#include "ucd/geometry.hpp"


#include "ucd/error.hpp"

namespace ucd {

Vec2 heading_from_velocity(Vec2 velocity, std::optional<Vec2> fallback) {
  const double speed = velocity.norm();
  if (speed >= kMinHeadingSpeed) return velocity * (1.0 / speed);
  if (fallback) {
    const double n = fallback->norm();
    if (n > 0.0) return *fallback * (1.0 / n);
  }
  throw GeometryError("undefined heading");
}

Vec2 to_ego_frame(const VehicleState& ego, const VehicleState& target) {
  const double n = ego.heading.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) throw GeometryError("undefined heading");
  const Vec2 h = ego.heading * (1.0 / n);
  const Vec2 right{h.y, -h.x};
  const Vec2 d = target.position - ego.position;
  return {dot(d, right), dot(d, h)};
}

RelativeSpacing spacing_polar(double x, double y) {
  if (x == 0.0 && y == 0.0) return {0.0, 0.0};
  return {std::hypot(x, y), std::atan2(y, x)};
}

Vec2 polar_to_cartesian(const RelativeSpacing& spacing) {
  return {spacing.s * std::cos(spacing.rho), spacing.s * std::sin(spacing.rho)};
}

VehicleState mirror_correction(const VehicleState& state) {
  VehicleState out = state;
  out.position = {state.position.y, state.position.x};
  out.velocity = {state.velocity.y, state.velocity.x};
  out.heading = {state.heading.y, state.heading.x};
  return out;
}

double centre_distance(const VehicleState& a, const VehicleState& b) {
  return (a.position - b.position).norm();
}

VehicleState rigid_transform(const VehicleState& state, double angle, Vec2 translation) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  auto rot = [c, s](Vec2 v) { return Vec2{c * v.x - s * v.y, s * v.x + c * v.y}; };
  VehicleState out = state;
  out.position = rot(state.position) + translation;
  out.velocity = rot(state.velocity);
  out.heading = rot(state.heading);
  return out;
}

}  // namespace ucd
