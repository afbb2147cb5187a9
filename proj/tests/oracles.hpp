#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "ucd/geometry.hpp"

// Reference implementations that share no code with the library.
namespace ucd::oracle {

struct Rect {
  Vec2 c, u, w;  // centre, unit length axis, unit width axis
  double hl, hw;
};

inline Rect rect_at(const VehicleState& s, double t) {
  const double n = std::hypot(s.heading.x, s.heading.y);
  const Vec2 u{s.heading.x / n, s.heading.y / n};
  return {{s.position.x + s.velocity.x * t, s.position.y + s.velocity.y * t},
          u,
          {-u.y, u.x},
          s.length / 2,
          s.width / 2};
}

inline double radius(const Rect& r, Vec2 n) {
  return r.hl * std::abs(n.x * r.u.x + n.y * r.u.y) + r.hw * std::abs(n.x * r.w.x + n.y * r.w.y);
}

// Largest separation over the four candidate axes; <= 0 iff the rectangles
// touch or overlap. Convex in t for constant velocities.
inline double separation(const VehicleState& a, const VehicleState& b, double t) {
  const Rect ra = rect_at(a, t), rb = rect_at(b, t);
  const Vec2 d{rb.c.x - ra.c.x, rb.c.y - ra.c.y};
  double best = -std::numeric_limits<double>::infinity();
  for (Vec2 n : std::array<Vec2, 4>{ra.u, ra.w, rb.u, rb.w}) {
    best = std::max(best, std::abs(d.x * n.x + d.y * n.y) - radius(ra, n) - radius(rb, n));
  }
  return best;
}

// First contact time by forward stepping, refined by bisection. Contacts
// shorter than one step are caught by minimising the convex separation.
inline double stepped_ttc(const VehicleState& a, const VehicleState& b, double dt = 1e-3,
                          double horizon = 60.0) {
  auto sep = [&](double t) { return separation(a, b, t); };
  if (sep(0.0) <= 0.0) return 0.0;
  auto refine = [&](double lo, double hi) {
    for (int i = 0; i < 80; ++i) {
      const double mid = 0.5 * (lo + hi);
      (sep(mid) <= 0.0 ? hi : lo) = mid;
    }
    return hi;
  };
  double prev = 0.0;
  for (double t = dt; t <= horizon; t += dt) {
    if (sep(t) <= 0.0) return refine(prev, t);
    prev = t;
  }
  double lo = 0.0, hi = 1e4;
  for (int i = 0; i < 300; ++i) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    if (sep(m1) < sep(m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  const double tmin = 0.5 * (lo + hi);
  if (sep(tmin) > 1e-12) return std::numeric_limits<double>::infinity();
  return refine(0.0, tmin);
}

}  // namespace ucd::oracle
