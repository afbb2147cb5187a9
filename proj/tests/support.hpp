#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "ucd/geometry.hpp"

namespace ucd::test {

inline VehicleState state(double x, double y, double vx, double vy, double length = 4.0,
                          double width = 2.0) {
  VehicleState s;
  s.position = {x, y};
  s.velocity = {vx, vy};
  const double v = std::hypot(vx, vy);
  s.heading = v > 0.0 ? Vec2{vx / v, vy / v} : Vec2{1.0, 0.0};
  s.length = length;
  s.width = width;
  return s;
}

inline VehicleState with_heading(VehicleState s, Vec2 h) {
  const double n = h.norm();
  s.heading = {h.x / n, h.y / n};
  return s;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ucd-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace ucd::test
