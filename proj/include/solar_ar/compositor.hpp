#pragma once

// Overlay rasterizer: bodies become flat filled disks drawn back to front
// over the camera frame; detections get a one-pixel outline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "solar_ar/frame.hpp"
#include "solar_ar/geometry.hpp"
#include "solar_ar/marker_tracker.hpp"

namespace solar_ar {

inline constexpr double kNearPlane = 0.01;  // m
inline constexpr Rgb kOutlineColor{0, 255, 0};

struct RenderItem {
  Vec3 world_pos;
  double radius = 0.0;  // m
  Rgb color;
  double depth = 0.0;  // camera-frame z, m
};

/// Item whose depth is taken from the camera pose (camera -> world).
inline RenderItem make_render_item(Vec3 world_pos, double radius, Rgb color, const Pose& camera_to_world) {
  return {world_pos, radius, color, camera_to_world.inverse().apply(world_pos).z};
}

/// Projected disk of an item; nullopt when it is behind the near plane.
struct Disk {
  Vec2 center;
  double radius_px = 0.0;  // integral
};

inline std::optional<Disk> project_disk(const RenderItem& item, const Pose& world_to_camera, const Intrinsics& k) {
  if (!(item.depth > kNearPlane) || !std::isfinite(item.depth)) return std::nullopt;
  const Vec3 c = world_to_camera.apply(item.world_pos);
  if (!(c.z > kNearPlane)) return std::nullopt;
  const Vec2 px{k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy};
  const double r = std::round(k.fx * item.radius / item.depth);
  if (!is_finite(px) || !std::isfinite(r)) return std::nullopt;
  return Disk{px, r};
}

/// Filled disks, farthest first; equal depths keep item order. A pixel is
/// covered when its centre lies within the radius (inclusive).
inline Frame render_overlay(const Frame& frame, std::span<const RenderItem> items, const Pose& camera_to_world,
                            const Intrinsics& k) {
  if (frame.format() != PixelFormat::kRgba8) throw Error(ErrorCode::kWrongFormat, "overlay needs an RGBA8 frame");
  Frame out = frame;
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].depth > items[b].depth; });
  const Pose world_to_camera = camera_to_world.inverse();
  for (std::size_t i : order) {
    const auto disk = project_disk(items[i], world_to_camera, k);
    if (!disk) continue;
    const double r = disk->radius_px;
    const double x_lo = std::max(0.0, std::ceil(disk->center.x - r));
    const double x_hi = std::min(static_cast<double>(out.width() - 1), std::floor(disk->center.x + r));
    const double y_lo = std::max(0.0, std::ceil(disk->center.y - r));
    const double y_hi = std::min(static_cast<double>(out.height() - 1), std::floor(disk->center.y + r));
    if (x_lo > x_hi || y_lo > y_hi) continue;
    for (int y = static_cast<int>(y_lo); y <= static_cast<int>(y_hi); ++y) {
      const double dy = y - disk->center.y;
      for (int x = static_cast<int>(x_lo); x <= static_cast<int>(x_hi); ++x) {
        const double dx = x - disk->center.x;
        if (dx * dx + dy * dy <= r * r) out.set_rgb(x, y, items[i].color);
      }
    }
  }
  return out;
}

namespace compositor_detail {

/// Integer line from a to b, Bresenham's pixel choice (ties toward a),
/// visiting only the steps that land inside the frame.
inline void draw_line(Frame& f, long ax, long ay, long bx, long by, Rgb c) {
  const long dx = std::labs(bx - ax);
  const long dy = std::labs(by - ay);
  const long sx = bx >= ax ? 1 : -1;
  const long sy = by >= ay ? 1 : -1;
  const bool x_major = dx >= dy;
  const long n = x_major ? dx : dy;      // steps along the major axis
  const long minor = x_major ? dy : dx;  // total minor displacement
  auto minor_at = [&](long i) { return n == 0 ? 0 : (2 * i * minor + n - 1) / (2 * n); };
  // Range of major steps whose major coordinate is inside the frame.
  const long lim = x_major ? f.width() - 1 : f.height() - 1;
  const long a_major = x_major ? ax : ay;
  const long s_major = x_major ? sx : sy;
  long lo = 0, hi = n;
  if (s_major > 0) {
    lo = std::max(lo, -a_major);
    hi = std::min(hi, lim - a_major);
  } else {
    lo = std::max(lo, a_major - lim);
    hi = std::min(hi, a_major);
  }
  for (long i = lo; i <= hi; ++i) {
    const long m = minor_at(i);
    const long x = x_major ? ax + sx * i : ax + sx * m;
    const long y = x_major ? ay + sy * m : ay + sy * i;
    if (x >= 0 && y >= 0 && x < f.width() && y < f.height()) f.set_rgb(static_cast<int>(x), static_cast<int>(y), c);
  }
}

/// Nearest pixel; coordinates are clamped to +-2^28 so the integer stepping
/// cannot overflow.
inline long to_pixel(double v) {
  constexpr double kLimit = 268435456.0;
  return std::lround(std::clamp(v, -kLimit, kLimit));
}

}  // namespace compositor_detail

/// Four one-pixel segments joining the rounded corners in order.
inline Frame draw_detection_outline(const Frame& frame, const Detection& det) {
  if (frame.format() != PixelFormat::kRgba8) throw Error(ErrorCode::kWrongFormat, "outline needs an RGBA8 frame");
  Frame out = frame;
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec2 a = det.corners_px[i];
    const Vec2 b = det.corners_px[(i + 1) % 4];
    if (!is_finite(a) || !is_finite(b)) continue;
    compositor_detail::draw_line(out, compositor_detail::to_pixel(a.x), compositor_detail::to_pixel(a.y),
                                 compositor_detail::to_pixel(b.x), compositor_detail::to_pixel(b.y), kOutlineColor);
  }
  return out;
}

}  // namespace solar_ar
