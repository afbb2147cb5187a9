#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "ucd/error.hpp"
#include "ucd/geometry.hpp"

using namespace ucd;
using ucd::test::state;
using ucd::test::with_heading;

namespace {

VehicleState at(double x, double y, Vec2 heading) {
  VehicleState s;
  s.position = {x, y};
  s.heading = heading;
  return s;
}

}  // namespace

TEST(ToEgoFrame, IdentityRotation) {
  const Vec2 p = to_ego_frame(at(0, 0, {0, 1}), at(0, 10, {0, 1}));
  EXPECT_DOUBLE_EQ(p.x, 0.0);
  EXPECT_DOUBLE_EQ(p.y, 10.0);
}

TEST(ToEgoFrame, HeadingMapsToPlusY) {
  const Vec2 p = to_ego_frame(at(0, 0, {1, 0}), at(10, 0, {1, 0}));
  EXPECT_NEAR(p.x, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(p.y, 10.0);
}

TEST(ToEgoFrame, CoincidentPositions) {
  const Vec2 p = to_ego_frame(at(5, 5, {0, 1}), at(5, 5, {0, 1}));
  EXPECT_DOUBLE_EQ(p.x, 0.0);
  EXPECT_DOUBLE_EQ(p.y, 0.0);
}

TEST(ToEgoFrame, PositiveXIsRightOfEgo) {
  // Heading north: a target to the east lies on the right.
  const Vec2 p = to_ego_frame(at(0, 0, {0, 1}), at(3, 0, {0, 1}));
  EXPECT_DOUBLE_EQ(p.x, 3.0);
  EXPECT_NEAR(p.y, 0.0, 1e-12);
}

TEST(ToEgoFrame, DegenerateHeadingThrows) {
  EXPECT_THROW(to_ego_frame(at(0, 0, {0, 0}), at(1, 1, {1, 0})), GeometryError);
}

TEST(ToEgoFrame, DistancePreservingAndRotationInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-50, 50), ang(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 1000; ++i) {
    const double a = ang(rng);
    const VehicleState ego = at(pos(rng), pos(rng), {std::cos(a), std::sin(a)});
    const double b = ang(rng);
    const VehicleState tgt = at(pos(rng), pos(rng), {std::cos(b), std::sin(b)});
    const Vec2 p = to_ego_frame(ego, tgt);
    const double d = centre_distance(ego, tgt);
    EXPECT_NEAR(p.norm(), d, 1e-9 * std::max(1.0, d));

    const double rot = ang(rng);
    const Vec2 shift{pos(rng), pos(rng)};
    const Vec2 q = to_ego_frame(rigid_transform(ego, rot, shift), rigid_transform(tgt, rot, shift));
    EXPECT_NEAR(q.x, p.x, 1e-9);
    EXPECT_NEAR(q.y, p.y, 1e-9);
  }
}

TEST(SpacingPolar, Examples) {
  auto a = spacing_polar(1, 0);
  EXPECT_DOUBLE_EQ(a.s, 1.0);
  EXPECT_DOUBLE_EQ(a.rho, 0.0);
  auto b = spacing_polar(0, 2);
  EXPECT_DOUBLE_EQ(b.s, 2.0);
  EXPECT_DOUBLE_EQ(b.rho, std::numbers::pi / 2);
  auto c = spacing_polar(-3, 0);
  EXPECT_DOUBLE_EQ(c.s, 3.0);
  EXPECT_DOUBLE_EQ(c.rho, std::numbers::pi);
  auto z = spacing_polar(0, 0);
  EXPECT_EQ(z.s, 0.0);
  EXPECT_EQ(z.rho, 0.0);
}

TEST(SpacingPolar, RoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 10000; ++i) {
    const Vec2 p{u(rng), u(rng)};
    const auto sp = spacing_polar(p);
    EXPECT_GE(sp.rho, -std::numbers::pi);
    EXPECT_LE(sp.rho, std::numbers::pi);
    const Vec2 q = polar_to_cartesian(sp);
    EXPECT_NEAR(q.x, p.x, 1e-9);
    EXPECT_NEAR(q.y, p.y, 1e-9);
  }
}

TEST(MirrorCorrection, SwapsComponents) {
  VehicleState s;
  s.position = {1, 2};
  s.velocity = {3, 4};
  s.heading = {0, 1};
  s.length = 5.0;
  s.acceleration_long = -2.0;
  const VehicleState m = mirror_correction(s);
  EXPECT_EQ(m.position, (Vec2{2, 1}));
  EXPECT_EQ(m.velocity, (Vec2{4, 3}));
  EXPECT_EQ(m.heading, (Vec2{1, 0}));
  EXPECT_EQ(m.length, 5.0);
  EXPECT_EQ(m.acceleration_long, -2.0);
}

TEST(MirrorCorrection, InvolutionAndFixedPoint) {
  VehicleState s = state(1.5, -7.25, 3.0, 0.5);
  const VehicleState back = mirror_correction(mirror_correction(s));
  EXPECT_EQ(back.position, s.position);
  EXPECT_EQ(back.velocity, s.velocity);
  EXPECT_EQ(back.heading, s.heading);
  VehicleState sym;
  sym.position = {5, 5};
  EXPECT_EQ(mirror_correction(sym).position, (Vec2{5, 5}));
}

TEST(HeadingFromVelocity, UnitAboveThreshold) {
  const Vec2 h = heading_from_velocity({3, 4});
  EXPECT_NEAR(h.norm(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(h.x, 0.6);
}

TEST(HeadingFromVelocity, FallbackAtRest) {
  const Vec2 h = heading_from_velocity({0.01, 0.0}, Vec2{0.0, -1.0});
  EXPECT_EQ(h, (Vec2{0.0, -1.0}));
  EXPECT_THROW(heading_from_velocity({0.05, 0.0}), GeometryError);
}

TEST(RigidTransform, PreservesScalars) {
  VehicleState s = with_heading(state(1, 2, 3, 4, 4.4, 1.7), {3, 4});
  s.acceleration_long = 1.25;
  const VehicleState r = rigid_transform(s, 0.7, {10, -3});
  EXPECT_NEAR(r.heading.norm(), 1.0, 1e-12);
  EXPECT_NEAR(r.velocity.norm(), 5.0, 1e-12);
  EXPECT_EQ(r.length, 4.4);
  EXPECT_EQ(r.acceleration_long, 1.25);
}
