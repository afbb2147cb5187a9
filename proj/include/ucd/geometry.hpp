#pragma once

#include <cmath>
#include <optional>

namespace ucd {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double k) const { return {x * k, y * k}; }
  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;

  double norm() const { return std::hypot(x, y); }
  constexpr double squared_norm() const { return x * x + y * y; }
};

constexpr Vec2 operator*(double k, Vec2 v) { return v * k; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
// z-component of the 3D cross product.
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

// Kinematic record of one road user at one instant, global frame.
struct VehicleState {
  double time = 0.0;          // s
  Vec2 position;              // m, vehicle centre
  Vec2 velocity;              // m/s
  double acceleration_long = 0.0;  // m/s^2 along heading
  Vec2 heading{1.0, 0.0};     // unit vector
  double length = 4.5;        // m
  double width = 1.8;         // m

  double speed() const { return velocity.norm(); }
};

// Polar form of an ego-frame offset.
struct RelativeSpacing {
  double s = 0.0;    // m, >= 0
  double rho = 0.0;  // rad, [-pi, pi], counter-clockwise from local (1, 0)
};

// Speeds below this are treated as standing still for heading purposes.
inline constexpr double kMinHeadingSpeed = 0.1;

// Heading derived from velocity. Below kMinHeadingSpeed the fallback (the last
// heading observed while moving) is reused; with no fallback this throws
// GeometryError("undefined heading").
Vec2 heading_from_velocity(Vec2 velocity, std::optional<Vec2> fallback = std::nullopt);

// Target centre in the ego-centric frame: the ego heading maps to local +y and
// local +x points to the ego's right.
Vec2 to_ego_frame(const VehicleState& ego, const VehicleState& target);

RelativeSpacing spacing_polar(double x, double y);
inline RelativeSpacing spacing_polar(Vec2 p) { return spacing_polar(p.x, p.y); }

// Inverse of spacing_polar.
Vec2 polar_to_cartesian(const RelativeSpacing& spacing);

// Swaps x and y of position, velocity and heading. Converts between y-up and
// y-down source conventions; an involution.
VehicleState mirror_correction(const VehicleState& state);

// Centre-to-centre distance.
double centre_distance(const VehicleState& a, const VehicleState& b);

// Rigid motion applied to a state (rotation by `angle` about the origin,
// then translation). Used by tests and the synthetic generators.
VehicleState rigid_transform(const VehicleState& state, double angle, Vec2 translation);

}  // namespace ucd
