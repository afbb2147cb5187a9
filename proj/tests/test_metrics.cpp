#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"
#include "ucd/error.hpp"
#include "ucd/metrics.hpp"

using namespace ucd;
using ucd::test::state;
using ucd::test::with_heading;

TEST(Ttc, HeadOnOneAxis) {
  // Boxes 4 m long: centres 24 m apart leave a 20 m gap, closing at 5 m/s.
  const auto ego = state(0, 0, 5, 0);
  const auto tgt = with_heading(state(24, 0, 0, 0), {-1, 0});
  EXPECT_NEAR(ttc_2d(ego, tgt), 4.0, 1e-12);
}

TEST(Ttc, Receding) {
  EXPECT_EQ(ttc_2d(state(0, 0, 5, 0), state(24, 0, 8, 0)), kInfinity);
}

TEST(Ttc, PerpendicularMissByOneMetre) {
  // Ego front is at x = 2 + 10t and reaches the target's x-span [19, 21] at
  // t = 1.7. The target rear is at y = -15 + 10t, which is 1 m past the ego's
  // top edge (y = 1) at that moment.
  const auto ego = state(0, 0, 10, 0, 4.0, 2.0);
  const auto tgt = state(20, -13, 0, 10, 4.0, 2.0);
  EXPECT_EQ(oracle::stepped_ttc(ego, tgt), kInfinity);
  EXPECT_EQ(ttc_2d(ego, tgt), kInfinity);
  // Half a second later the target would still be in the way.
  const auto late = state(20, -18, 0, 10, 4.0, 2.0);
  const double want = oracle::stepped_ttc(ego, late);
  ASSERT_TRUE(std::isfinite(want));
  EXPECT_NEAR(ttc_2d(ego, late), want, 1e-6);
}

TEST(Ttc, OverlappingIsZero) {
  EXPECT_EQ(ttc_2d(state(0, 0, 5, 0), state(1, 0, 0, 0)), 0.0);
}

TEST(Ttc, ZeroSizeThrows) {
  EXPECT_THROW(ttc_2d(state(0, 0, 5, 0, 0.0, 2.0), state(20, 0, 0, 0)), MetricError);
  EXPECT_THROW(ttc_2d(state(0, 0, 5, 0), state(20, 0, 0, 0, 4.0, 0.0)), MetricError);
}

TEST(Ttc, AgreesWithSteppedOracleOnRandomEncounters) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-40, 40), vel(-15, 15), len(3, 6), wid(1.5, 2.5),
      ang(-std::numbers::pi, std::numbers::pi);
  int checked = 0, finite = 0;
  while (checked < 500) {
    auto a = with_heading(state(0, 0, vel(rng), vel(rng), len(rng), wid(rng)),
                          {std::cos(ang(rng)), std::sin(ang(rng))});
    // Aim roughly at the ego so both hits and near misses are common.
    const Vec2 p{pos(rng), pos(rng)};
    const double aim = std::atan2(-p.y, -p.x) + 0.3 * std::sin(ang(rng));
    const double speed = std::abs(vel(rng)) + 2.0;
    auto b = with_heading(state(p.x, p.y, a.velocity.x + speed * std::cos(aim),
                                a.velocity.y + speed * std::sin(aim), len(rng), wid(rng)),
                          {std::cos(ang(rng)), std::sin(ang(rng))});
    if (oracle::separation(a, b, 0.0) <= 0.0) continue;
    const double want = oracle::stepped_ttc(a, b);
    const double got = ttc_2d(a, b);
    if (std::isinf(want)) {
      EXPECT_EQ(got, kInfinity);
    } else {
      ++finite;
      EXPECT_NEAR(got, want, 1e-3);
    }
    ++checked;
  }
  EXPECT_GT(finite, 100);
  EXPECT_LT(finite, 490);
}

TEST(Ttc, ScaleInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-30, 30), vel(-10, 10), k(0.2, 5.0);
  for (int i = 0; i < 200; ++i) {
    auto a = state(0, 0, vel(rng), vel(rng));
    auto b = state(pos(rng), pos(rng), vel(rng), vel(rng));
    if (oracle::separation(a, b, 0.0) <= 0.0) continue;
    const double t = ttc_2d(a, b);
    const double s = k(rng);
    // Scaling lengths and speeds together leaves time unchanged.
    auto as = a, bs = b;
    for (auto* v : {&as, &bs}) {
      v->position = v->position * s;
      v->velocity = v->velocity * s;
      v->length *= s;
      v->width *= s;
    }
    const double ts = ttc_2d(as, bs);
    if (std::isinf(t)) {
      EXPECT_TRUE(std::isinf(ts));
    } else {
      EXPECT_NEAR(ts, t, 1e-9 * std::max(1.0, t));
    }
    // Scaling speeds alone divides time.
    auto av = a, bv = b;
    av.velocity = av.velocity * s;
    bv.velocity = bv.velocity * s;
    const double tv = ttc_2d(av, bv);
    if (std::isinf(t)) {
      EXPECT_TRUE(std::isinf(tv));
    } else {
      EXPECT_NEAR(tv, t / s, 1e-9 * std::max(1.0, t / s));
    }
  }
}

TEST(Ttc, SymmetricInRoles) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(-30, 30), vel(-10, 10);
  for (int i = 0; i < 200; ++i) {
    auto a = state(0, 0, vel(rng), vel(rng));
    auto b = state(pos(rng), pos(rng), vel(rng), vel(rng));
    if (oracle::separation(a, b, 0.0) <= 0.0) continue;
    const double ab = ttc_2d(a, b), ba = ttc_2d(b, a);
    if (std::isinf(ab)) {
      EXPECT_TRUE(std::isinf(ba));
    } else {
      EXPECT_NEAR(ab, ba, 1e-9 * std::max(1.0, ab));
    }
  }
}

TEST(BoxGap, ParallelBoxes) {
  EXPECT_NEAR(bounding_box_gap(state(0, 0, 1, 0), state(24, 0, 1, 0)), 20.0, 1e-12);
  EXPECT_NEAR(bounding_box_gap(state(0, 0, 1, 0), state(0, 5, 1, 0)), 3.0, 1e-12);
  EXPECT_EQ(bounding_box_gap(state(0, 0, 1, 0), state(1, 0, 1, 0)), 0.0);
}

TEST(BoxGap, CornerToCorner) {
  // Diagonal offset: nearest features are corners (2,1) and (5,5).
  EXPECT_NEAR(bounding_box_gap(state(0, 0, 1, 0), state(7, 6, 1, 0)), 5.0, 1e-12);
}

TEST(Drac, Formula) {
  // ||dv|| = 10 m/s, gap 20 m.
  EXPECT_NEAR(drac(state(0, 0, 10, 0), state(24, 0, 0, 0)), 2.5, 1e-12);
}

TEST(Drac, NotApproachingIsZero) {
  EXPECT_EQ(drac(state(0, 0, 10, 0), state(24, 0, 15, 0)), 0.0);
  EXPECT_EQ(drac(state(0, 0, 10, 0), state(24, 0, 10, 0)), 0.0);
}

TEST(Drac, OverlapThrows) {
  EXPECT_THROW(drac(state(0, 0, 10, 0), state(2, 0, 0, 0)), MetricError);
}

TEST(Psd, Formula) {
  // Gap 30 m, v = 10 m/s, dec 5.5: stopping distance 100/11.
  const auto r = psd(state(0, 0, 10, 0), state(34, 0, 10, 0), 5.5);
  ASSERT_TRUE(r.has_value());
  EXPECT_NEAR(*r, 3.30, 1e-12);
}

TEST(Psd, StoppingDistanceGivesOne) {
  const double stop = 100.0 / 11.0;
  const auto r = psd(state(0, 0, 10, 0), state(4 + stop, 0, 10, 0), 5.5);
  ASSERT_TRUE(r.has_value());
  EXPECT_NEAR(*r, 1.0, 1e-12);
}

TEST(Psd, FollowerAtRestIsUndefined) {
  EXPECT_FALSE(psd(state(0, 0, 0, 0), state(20, 0, 5, 0)).has_value());
}

TEST(Psd, PairResolvesFollower) {
  const auto front = state(30, 0, 10, 0);
  const auto back = state(0, 0, 20, 0);
  EXPECT_EQ(*psd_pair(back, front), *psd(back, front));
  EXPECT_EQ(*psd_pair(front, back), *psd(back, front));
}

TEST(Pet, Examples) {
  EXPECT_EQ(pet(10.0, 12.0).value, 2.0);
  EXPECT_FALSE(pet(10.0, 12.0).overlap);
  EXPECT_EQ(pet(10.0, 10.0).value, 0.0);
  EXPECT_FALSE(pet(10.0, 10.0).overlap);
  const auto o = pet(12.0, 10.0);
  EXPECT_EQ(o.value, 0.0);
  EXPECT_TRUE(o.overlap);
}

TEST(GapRate, ClosingIsNegative) {
  EXPECT_NEAR(gap_rate(state(0, 0, 10, 0), state(24, 0, 4, 0)), -6.0, 1e-12);
  EXPECT_TRUE(is_approaching(state(0, 0, 10, 0), state(24, 0, 4, 0)));
  EXPECT_FALSE(is_approaching(state(0, 0, 4, 0), state(24, 0, 10, 0)));
}
