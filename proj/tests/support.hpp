#pragma once

// Seeded generators and small oracles shared by the tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "solar_ar/geometry.hpp"
#include "solar_ar/marker_base.hpp"

namespace solar_ar::fixtures {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  bool coin() { return integer(0, 1) == 1; }
  std::uint8_t byte() { return static_cast<std::uint8_t>(integer(0, 255)); }

  Vec3 vec3(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }
  Vec2 vec2(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi)}; }

  Vec3 unit() {
    const double z = uniform(-1.0, 1.0);
    const double a = uniform(0.0, 2.0 * std::numbers::pi);
    const double r = std::sqrt(1.0 - z * z);
    return {r * std::cos(a), r * std::sin(a), z};
  }

  Mat3 rotation() { return axis_angle(unit(), uniform(0.0, std::numbers::pi)); }
  Pose pose(double extent) { return {rotation(), vec3(-extent, extent)}; }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline double max_abs_diff(const Mat3& a, const Mat3& b) {
  double d = 0.0;
  for (int i = 0; i < 9; ++i) d = std::max(d, std::abs(a.m[i] - b.m[i]));
  return d;
}

inline double deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Angle of the rotation taking a to b, in degrees.
inline double rotation_error_deg(const Mat3& a, const Mat3& b) { return deg(rotation_angle(a.transposed() * b)); }

/// Random marker pose (marker -> camera) with the printed face toward the
/// camera: distance in [min_sizes, max_sizes] marker sizes along a random
/// pixel ray, incidence up to max_incidence_deg and any in-plane turn.
/// Returns false when the marker does not fit inside the frame with the
/// given margin.
inline bool random_marker_pose(Rng& rng, const Intrinsics& k, double size_m, double min_sizes, double max_sizes,
                               double max_incidence_deg, double margin_px, Pose& out) {
  const double distance = size_m * rng.uniform(min_sizes, max_sizes);
  const double u = rng.uniform(margin_px, k.width - margin_px);
  const double v = rng.uniform(margin_px, k.height - margin_px);
  const Vec3 ray = normalized(Vec3{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0});
  const Vec3 toward_camera = -ray;
  const double max_inc = max_incidence_deg * std::numbers::pi / 180.0;
  const double inc = std::acos(1.0 - rng.uniform(0.0, 1.0) * (1.0 - std::cos(max_inc)));
  const Vec3 helper = std::abs(toward_camera.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 p1 = normalized(cross(toward_camera, helper));
  const Vec3 p2 = cross(toward_camera, p1);
  const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Vec3 y = axis_angle(std::cos(az) * p1 + std::sin(az) * p2, inc) * toward_camera;
  const Vec3 h2 = std::abs(y.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 x = axis_angle(y, rng.uniform(0.0, 2.0 * std::numbers::pi)) * normalized(cross(h2, y));
  out = {Mat3::from_columns(x, y, cross(x, y)), distance * ray};
  const MarkerSpec spec{0, MarkerCode{}, size_m};
  for (Vec3 c : spec.corners()) {
    const Vec3 cam = out.apply(c);
    if (!(cam.z > 0.0)) return false;
    const Vec2 p = project(k, out, c);
    if (p.x < margin_px || p.y < margin_px || p.x > k.width - 1 - margin_px || p.y > k.height - 1 - margin_px) {
      return false;
    }
  }
  return true;
}

}  // namespace solar_ar::fixtures
