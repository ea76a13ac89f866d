#pragma once

// Square fiducial detection: binarize, find dark convex quads, refine their
// corners to sub-pixel accuracy on the full-resolution level, decode the
// 4x4 code against the active marker bases and recover the camera pose.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "solar_ar/error.hpp"
#include "solar_ar/frame.hpp"
#include "solar_ar/geometry.hpp"
#include "solar_ar/marker_base.hpp"

namespace solar_ar {

/// Four image points, clockwise on screen (y down) starting with the corner
/// closest to the image's top-left unless stated otherwise.
using Quad = std::array<Vec2, 4>;

struct DetectorParams {
  int threshold = 128;
  /// When set, threshold = mean(level 0) - adaptive_offset.
  bool adaptive = false;
  int adaptive_offset = 16;
  /// Minimum fraction of cells decoded with a margin of 64 gray levels.
  double min_confidence = 0.0;
  /// Refine the pose against every code edge after decoding.
  bool model_refinement = true;
};

struct Detection {
  int marker_id = 0;
  Quad corners_px{};  // clockwise from the decoded top-left
  Mat3 homography;    // marker (X, Z) in meters -> pixels
  Pose pose;          // marker -> camera
  double confidence = 0.0;
  int rotation = 0;
};

struct DecodeResult {
  MarkerSpec spec;
  int rotation = 0;  // clockwise quarter turns of the printed face on screen
  double confidence = 0.0;
};

inline Frame binarize(const Frame& frame, int threshold) {
  if (frame.format() != PixelFormat::kGray8) throw Error(ErrorCode::kWrongFormat, "binarize expects GRAY8");
  Frame out = frame;
  for (std::uint8_t& p : out.mutable_pixels()) p = p < threshold ? 0 : 255;
  return out;
}

inline int adaptive_threshold(const Frame& gray, int offset) {
  std::uint64_t sum = 0;
  for (std::uint8_t p : gray.pixels()) sum += p;
  const auto mean = static_cast<int>(sum / gray.pixels().size());
  return std::clamp(mean - offset, 1, 255);
}

namespace tracker_detail {

inline double shoelace(std::span<const Vec2> poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) a += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * a;
}

/// Andrew's monotone chain; returns the hull clockwise on screen.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i - 1] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  // Monotone chain yields positive shoelace area in y-up terms, which is
  // clockwise on a y-down screen.
  return hull;
}

/// Puts four points in clockwise screen order starting at min(x + y).
inline Quad canonical_order(Quad q) {
  Vec2 c{};
  for (Vec2 p : q) c = c + p;
  c = 0.25 * c;
  std::sort(q.begin(), q.end(), [c](Vec2 a, Vec2 b) {
    return std::atan2(a.y - c.y, a.x - c.x) < std::atan2(b.y - c.y, b.x - c.x);
  });
  // Increasing atan2 on a y-down screen is clockwise.
  std::size_t first = 0;
  for (std::size_t i = 1; i < 4; ++i)
    if (q[i].x + q[i].y < q[first].x + q[first].y) first = i;
  std::rotate(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(first), q.end());
  return q;
}

inline double min_interior_angle(const Quad& q) {
  double best = std::numbers::pi;
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec2 a = q[(i + 3) % 4] - q[i];
    const Vec2 b = q[(i + 1) % 4] - q[i];
    best = std::min(best, std::atan2(std::abs(cross(a, b)), dot(a, b)));
  }
  return best;
}

inline bool is_convex(const Quad& q) {
  int sign = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double c = cross(q[(i + 1) % 4] - q[i], q[(i + 2) % 4] - q[(i + 1) % 4]);
    if (c == 0.0) return false;
    const int s = c > 0 ? 1 : -1;
    if (sign != 0 && s != sign) return false;
    sign = s;
  }
  return true;
}

/// Bilinear gray lookup with pixel centres at integer coordinates; clamps
/// at the frame border.
inline double sample(const Frame& g, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(g.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(g.height() - 1));
  const int x0 = std::min(static_cast<int>(x), g.width() - 2 < 0 ? 0 : g.width() - 2);
  const int y0 = std::min(static_cast<int>(y), g.height() - 2 < 0 ? 0 : g.height() - 2);
  const int x1 = std::min(x0 + 1, g.width() - 1);
  const int y1 = std::min(y0 + 1, g.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1 - fx) * g.gray(x0, y0) + fx * g.gray(x1, y0);
  const double bot = (1 - fx) * g.gray(x0, y1) + fx * g.gray(x1, y1);
  return (1 - fy) * top + fy * bot;
}

/// Position along p + s*n (s in [-window, window]) where the profile rises
/// through the threshold, closest to s = 0. The crossing is then re-located
/// at the mid-level between the local dark and light plateaus so that edge
/// positions do not depend on the absolute contrast.
inline std::optional<double> find_rising_edge(const Frame& g, Vec2 p, Vec2 n, double window, double threshold) {
  constexpr double kStep = 0.25;
  constexpr double kPlateau = 1.5;
  const int count = static_cast<int>(std::floor(2.0 * (window + kPlateau) / kStep)) + 1;
  const double s0 = -window - kPlateau;
  std::array<double, 512> prof{};
  if (count > static_cast<int>(prof.size())) return std::nullopt;
  for (int i = 0; i < count; ++i) {
    const double s = s0 + i * kStep;
    prof[static_cast<std::size_t>(i)] = sample(g, p.x + s * n.x, p.y + s * n.y);
  }
  auto crossing = [&](int i, double level) {
    const double a = prof[static_cast<std::size_t>(i)];
    const double b = prof[static_cast<std::size_t>(i + 1)];
    return s0 + (i + (level - a) / (b - a)) * kStep;
  };
  const int lo_i = static_cast<int>(std::lround(kPlateau / kStep));
  const int hi_i = count - 1 - lo_i;
  int best_i = -1;
  double best_s = 0.0;
  for (int i = lo_i; i < hi_i; ++i) {
    const double a = prof[static_cast<std::size_t>(i)];
    const double b = prof[static_cast<std::size_t>(i + 1)];
    if (a < threshold && b >= threshold) {
      const double s = crossing(i, threshold);
      if (best_i < 0 || std::abs(s) < std::abs(best_s)) {
        best_i = i;
        best_s = s;
      }
    }
  }
  if (best_i < 0) return std::nullopt;
  const int span = static_cast<int>(std::lround(kPlateau / kStep));
  double dark = 255.0, light = 0.0;
  for (int i = std::max(0, best_i - span); i <= best_i; ++i) dark = std::min(dark, prof[static_cast<std::size_t>(i)]);
  for (int i = best_i + 1; i <= std::min(count - 1, best_i + 1 + span); ++i) {
    light = std::max(light, prof[static_cast<std::size_t>(i)]);
  }
  const double level = 0.5 * (dark + light);
  // Walk to the mid-level crossing adjacent to the threshold crossing.
  int i = best_i;
  while (i > 0 && prof[static_cast<std::size_t>(i)] >= level) --i;
  while (i + 1 < count - 1 && prof[static_cast<std::size_t>(i + 1)] < level) ++i;
  if (!(prof[static_cast<std::size_t>(i)] < level && prof[static_cast<std::size_t>(i + 1)] >= level)) return best_s;
  const double s = crossing(i, level);
  return std::abs(s) <= window ? std::optional<double>(s) : std::nullopt;
}

struct Line {
  Vec2 point;
  Vec2 dir;  // unit
};

inline std::optional<Line> fit_line(std::span<const Vec2> pts) {
  if (pts.size() < 3) return std::nullopt;
  Vec2 c{};
  for (Vec2 p : pts) c = c + p;
  c = (1.0 / static_cast<double>(pts.size())) * c;
  double sxx = 0, sxy = 0, syy = 0;
  for (Vec2 p : pts) {
    const Vec2 d = p - c;
    sxx += d.x * d.x;
    sxy += d.x * d.y;
    syy += d.y * d.y;
  }
  const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  return Line{c, {std::cos(angle), std::sin(angle)}};
}

inline std::optional<Vec2> intersect(const Line& a, const Line& b) {
  const double den = cross(a.dir, b.dir);
  if (std::abs(den) < 1e-9) return std::nullopt;
  const double s = cross(b.point - a.point, b.dir) / den;
  return a.point + s * a.dir;
}

/// Closed-form homography taking the square [0,side]^2 (corners in order
/// (0,0), (side,0), (side,side), (0,side)) onto quad.
inline Mat3 square_to_quad(const Quad& q, double side) {
  const double x0 = q[0].x, y0 = q[0].y, x1 = q[1].x, y1 = q[1].y;
  const double x2 = q[2].x, y2 = q[2].y, x3 = q[3].x, y3 = q[3].y;
  const double sx = x0 - x1 + x2 - x3;
  const double sy = y0 - y1 + y2 - y3;
  Mat3 h;
  if (sx == 0.0 && sy == 0.0) {
    h = {{x1 - x0, x3 - x0, x0, y1 - y0, y3 - y0, y0, 0, 0, 1}};
  } else {
    const double dx1 = x1 - x2, dx2 = x3 - x2, dy1 = y1 - y2, dy2 = y3 - y2;
    const double den = dx1 * dy2 - dx2 * dy1;
    if (den == 0.0) throw Error(ErrorCode::kDegenerate, "degenerate quad");
    const double g = (sx * dy2 - dx2 * sy) / den;
    const double hh = (dx1 * sy - sx * dy1) / den;
    h = {{x1 - x0 + g * x1, x3 - x0 + hh * x3, x0, y1 - y0 + g * y1, y3 - y0 + hh * y3, y0, g, hh, 1}};
  }
  return h * Mat3::diagonal(1.0 / side, 1.0 / side, 1.0);
}

}  // namespace tracker_detail

/// Dark 4-connected components (value 0) of at least 64 px that do not touch
/// the frame border, reduced to convex quads. Corners lie on the outer
/// pixel boundary of the component.
inline std::vector<Quad> find_quads(const Frame& binary) {
  using namespace tracker_detail;
  if (binary.format() != PixelFormat::kGray8) throw Error(ErrorCode::kWrongFormat, "find_quads expects GRAY8");
  const int w = binary.width();
  const int h = binary.height();
  std::vector<std::int32_t> label(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), -1);
  std::vector<std::int32_t> stack;
  std::vector<std::int32_t> members;
  std::vector<Quad> quads;
  const auto px = binary.pixels();
  std::int32_t next_label = 0;

  for (std::int32_t start = 0; start < w * h; ++start) {
    if (px[static_cast<std::size_t>(start)] != 0 || label[static_cast<std::size_t>(start)] >= 0) continue;
    members.clear();
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = next_label;
    bool touches_border = false;
    while (!stack.empty()) {
      const std::int32_t i = stack.back();
      stack.pop_back();
      members.push_back(i);
      const int x = i % w;
      const int y = i / w;
      if (x == 0 || y == 0 || x == w - 1 || y == h - 1) touches_border = true;
      const std::int32_t nbrs[4] = {x > 0 ? i - 1 : -1, x < w - 1 ? i + 1 : -1, y > 0 ? i - w : -1,
                                    y < h - 1 ? i + w : -1};
      for (std::int32_t n : nbrs) {
        if (n < 0 || px[static_cast<std::size_t>(n)] != 0 || label[static_cast<std::size_t>(n)] >= 0) continue;
        label[static_cast<std::size_t>(n)] = next_label;
        stack.push_back(n);
      }
    }
    ++next_label;
    if (touches_border || members.size() < 64) continue;

    // Row extents are enough for the hull.
    int ymin = h, ymax = -1;
    for (std::int32_t i : members) {
      ymin = std::min(ymin, i / w);
      ymax = std::max(ymax, i / w);
    }
    std::vector<int> lo(static_cast<std::size_t>(ymax - ymin + 1), w);
    std::vector<int> hi(static_cast<std::size_t>(ymax - ymin + 1), -1);
    Vec2 centroid{};
    for (std::int32_t i : members) {
      const int x = i % w;
      const int y = i / w;
      auto r = static_cast<std::size_t>(y - ymin);
      lo[r] = std::min(lo[r], x);
      hi[r] = std::max(hi[r], x);
      centroid = centroid + Vec2{static_cast<double>(x), static_cast<double>(y)};
    }
    centroid = (1.0 / static_cast<double>(members.size())) * centroid;
    std::vector<Vec2> pts;
    pts.reserve(lo.size() * 4);
    for (std::size_t r = 0; r < lo.size(); ++r) {
      const double y = static_cast<double>(ymin) + static_cast<double>(r);
      pts.push_back({lo[r] - 0.5, y - 0.5});
      pts.push_back({lo[r] - 0.5, y + 0.5});
      pts.push_back({hi[r] + 0.5, y - 0.5});
      pts.push_back({hi[r] + 0.5, y + 0.5});
    }
    const std::vector<Vec2> hull = convex_hull(std::move(pts));
    if (hull.size() < 4) continue;

    auto farthest = [&](auto score) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < hull.size(); ++i)
        if (score(hull[i]) > score(hull[best])) best = i;
      return hull[best];
    };
    const Vec2 c0 = farthest([&](Vec2 p) { return norm(p - centroid); });
    const Vec2 c1 = farthest([&](Vec2 p) { return norm(p - c0); });
    const Vec2 axis = c1 - c0;
    const Vec2 c2 = farthest([&](Vec2 p) { return cross(axis, p - c0); });
    const Vec2 c3 = farthest([&](Vec2 p) { return -cross(axis, p - c0); });
    if (!(cross(axis, c2 - c0) > 0.0) || !(-cross(axis, c3 - c0) > 0.0)) continue;

    const Quad q = canonical_order({c0, c2, c1, c3});
    if (!is_convex(q)) continue;
    const double hull_area = std::abs(shoelace(hull));
    if (std::abs(shoelace(q)) < 0.8 * hull_area) continue;
    if (min_interior_angle(q) < std::numbers::pi / 6.0) continue;
    quads.push_back(q);
  }
  return quads;
}

/// Sub-pixel corners: fits a line to the dark-to-light transition along each
/// side (searched within +-window px of the current side) and intersects
/// neighbouring lines. Returns nothing when a side cannot be fitted or a
/// corner moves further than window.
inline std::optional<Quad> refine_quad(const Frame& gray, const Quad& quad, double window, double threshold) {
  using namespace tracker_detail;
  std::array<Line, 4> lines;
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec2 a = quad[i];
    const Vec2 b = quad[(i + 1) % 4];
    const double len = norm(b - a);
    if (!(len > 2.0)) return std::nullopt;
    const Vec2 e = (1.0 / len) * (b - a);
    const Vec2 n{e.y, -e.x};  // outward for a clockwise quad
    const int samples = std::clamp(static_cast<int>(len), 6, 128);
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(samples));
    for (int k = 0; k < samples; ++k) {
      const double f = 0.12 + 0.76 * (k + 0.5) / samples;
      const Vec2 p = a + f * (b - a);
      if (auto s = find_rising_edge(gray, p, n, window, threshold)) pts.push_back(p + *s * n);
    }
    if (pts.size() < static_cast<std::size_t>(std::max(3, samples / 3))) return std::nullopt;
    // One pass of outlier trimming against the first fit.
    auto line = fit_line(pts);
    if (!line) return std::nullopt;
    std::vector<Vec2> kept;
    const Vec2 ln{-line->dir.y, line->dir.x};
    for (Vec2 p : pts)
      if (std::abs(dot(p - line->point, ln)) < 1.0) kept.push_back(p);
    if (kept.size() >= 3) line = fit_line(kept);
    if (!line) return std::nullopt;
    lines[i] = *line;
  }
  Quad out;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto c = intersect(lines[(i + 3) % 4], lines[i]);
    if (!c || norm(*c - quad[i]) > window) return std::nullopt;
    out[i] = *c;
  }
  if (!is_convex(out)) return std::nullopt;
  return out;
}

namespace tracker_detail {

inline constexpr int kCanonicalCell = 8;

/// Mean of a 3x3 lattice of bilinear samples around every cell centre.
inline std::array<double, 36> sample_cells(const Frame& gray, const Quad& quad) {
  const double side = kMarkerCells * kCanonicalCell;
  const Mat3 h = square_to_quad(quad, side);
  std::array<double, 36> out{};
  for (int r = 0; r < kMarkerCells; ++r) {
    for (int c = 0; c < kMarkerCells; ++c) {
      const double cx = (c + 0.5) * kCanonicalCell;
      const double cy = (r + 0.5) * kCanonicalCell;
      double sum = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Vec2 p = apply_homography(h, {cx + dx, cy + dy});
          sum += sample(gray, p.x, p.y);
        }
      out[static_cast<std::size_t>(r * kMarkerCells + c)] = sum / 9.0;
    }
  }
  return out;
}

}  // namespace tracker_detail

/// Reads the code inside quad (clockwise, any starting corner) and matches
/// it in all four orientations against every active base.
inline std::optional<DecodeResult> decode(const Frame& gray, const Quad& quad, std::span<const MarkerBase> bases,
                                          double threshold = 128.0) {
  using namespace tracker_detail;
  if (gray.format() != PixelFormat::kGray8) throw Error(ErrorCode::kWrongFormat, "decode expects GRAY8");
  std::array<double, 36> cells;
  try {
    cells = sample_cells(gray, quad);
  } catch (const Error&) {
    return std::nullopt;
  }
  int confident = 0;
  for (double v : cells)
    if (std::abs(v - threshold) >= 64.0) ++confident;
  for (int r = 0; r < kMarkerCells; ++r)
    for (int c = 0; c < kMarkerCells; ++c) {
      const bool border = r == 0 || c == 0 || r == kMarkerCells - 1 || c == kMarkerCells - 1;
      if (border && cells[static_cast<std::size_t>(r * kMarkerCells + c)] >= threshold) return std::nullopt;
    }
  std::uint16_t bits = 0;
  for (int r = 0; r < kCodeCells; ++r)
    for (int c = 0; c < kCodeCells; ++c)
      if (cells[static_cast<std::size_t>((r + 1) * kMarkerCells + c + 1)] >= threshold) {
        bits = static_cast<std::uint16_t>(bits | (1u << (r * kCodeCells + c)));
      }
  const MarkerCode observed(bits);

  std::optional<DecodeResult> found;
  for (const MarkerBase& base : bases) {
    if (!base.active) continue;
    for (const MarkerSpec& spec : base.markers) {
      for (int k = 0; k < 4; ++k) {
        if (spec.code.rotated_cw(k) != observed) continue;
        if (found) {
          if (found->spec.id == spec.id && found->spec.code == spec.code) break;  // same marker again
          return std::nullopt;                                                    // ambiguous
        }
        found = DecodeResult{spec, k, confident / 36.0};
        break;  // smallest k for self-symmetric codes
      }
    }
  }
  return found;
}

namespace tracker_detail {

/// Gaussian elimination with partial pivoting on an augmented P x (P + 1)
/// row-major system.
template <std::size_t P>
std::optional<std::array<double, P>> solve_linear(std::array<double, P*(P + 1)> aug) {
  constexpr std::size_t w = P + 1;
  for (std::size_t col = 0; col < P; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < P; ++r)
      if (std::abs(aug[r * w + col]) > std::abs(aug[piv * w + col])) piv = r;
    if (std::abs(aug[piv * w + col]) < 1e-300) return std::nullopt;
    if (piv != col)
      for (std::size_t j = 0; j <= P; ++j) std::swap(aug[col * w + j], aug[piv * w + j]);
    for (std::size_t r = col + 1; r < P; ++r) {
      const double f = aug[r * w + col] / aug[col * w + col];
      for (std::size_t j = col; j <= P; ++j) aug[r * w + j] -= f * aug[col * w + j];
    }
  }
  std::array<double, P> x{};
  for (std::size_t i = P; i-- > 0;) {
    double s = aug[i * w + P];
    for (std::size_t j = i + 1; j < P; ++j) s -= aug[i * w + j] * x[j];
    x[i] = s / aug[i * w + i];
  }
  return x;
}

/// Small left-multiplied rotation and additive translation update.
inline Pose perturb_pose(const Pose& p, const std::array<double, 6>& d) {
  const Vec3 w{d[0], d[1], d[2]};
  const double angle = norm(w);
  const Mat3 dr = angle > 0.0 ? axis_angle(w, angle) : Mat3::identity();
  return {dr * p.rotation, p.translation + Vec3{d[3], d[4], d[5]}};
}

/// Gauss-Newton on the corner reprojection error. Returns the pose and the
/// summed squared pixel error, or nullopt if the marker ends up behind the
/// camera.
inline std::optional<std::pair<Pose, double>> fit_pose_to_corners(Pose pose, const Intrinsics& k,
                                                                  const std::array<Vec3, 4>& model,
                                                                  const Quad& corners) {
  auto residuals = [&](const Pose& p) -> std::optional<std::array<double, 8>> {
    std::array<double, 8> r{};
    for (std::size_t i = 0; i < 4; ++i) {
      const Vec3 c = p.apply(model[i]);
      if (!(c.z > 1e-6)) return std::nullopt;
      r[2 * i] = k.fx * c.x / c.z + k.cx - corners[i].x;
      r[2 * i + 1] = k.fy * c.y / c.z + k.cy - corners[i].y;
    }
    return r;
  };
  auto cost_of = [](const std::array<double, 8>& r) {
    double c = 0.0;
    for (double v : r) c += v * v;
    return c;
  };
  auto r0 = residuals(pose);
  if (!r0) return std::nullopt;
  double cost = cost_of(*r0);
  double damping = 1e-3;
  for (int it = 0; it < 50; ++it) {
    std::array<std::array<double, 6>, 8> jac{};
    for (std::size_t p = 0; p < 6; ++p) {
      std::array<double, 6> d{};
      d[p] = 1e-7;
      const auto rp = residuals(perturb_pose(pose, d));
      if (!rp) return std::nullopt;
      for (std::size_t i = 0; i < 8; ++i) jac[i][p] = ((*rp)[i] - (*r0)[i]) / 1e-7;
    }
    std::array<double, 42> aug{};
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t a = 0; a < 6; ++a) {
        aug[a * 7 + 6] -= jac[i][a] * (*r0)[i];
        for (std::size_t b = 0; b < 6; ++b) aug[a * 7 + b] += jac[i][a] * jac[i][b];
      }
    for (std::size_t a = 0; a < 6; ++a) aug[a * 7 + a] *= 1.0 + damping;
    const auto delta = solve_linear<6>(aug);
    if (!delta) break;
    const Pose next = perturb_pose(pose, *delta);
    const auto rn = residuals(next);
    if (rn && cost_of(*rn) < cost) {
      const double gain = cost - cost_of(*rn);
      pose = next;
      r0 = rn;
      cost = cost_of(*rn);
      damping = std::max(1e-9, damping * 0.1);
      if (gain < 1e-14 * (1.0 + cost)) break;
    } else {
      damping *= 10.0;
      if (damping > 1e8) break;
    }
  }
  return std::make_pair(pose, cost);
}

/// Edge measurements along every dark/light boundary of the decoded cell
/// grid, including the outer border against the light surround. Cell
/// coordinates span [0,6]^2 with columns along x; a candidate pose maps them
/// into the image through the projected outer corners.
class EdgeModelFit {
 public:
  EdgeModelFit(const Frame& gray, MarkerCode code, double threshold)
      : gray_(gray), threshold_(threshold) {
    auto dark = [code](int r, int c) {
      if (r < 0 || c < 0 || r >= kMarkerCells || c >= kMarkerCells) return false;  // light surround
      return !marker_cell_white(code, r, c);
    };
    // Vertical grid lines u = c between cells (r, c-1) and (r, c).
    for (int r = 0; r < kMarkerCells; ++r)
      for (int c = 0; c <= kMarkerCells; ++c) {
        const bool left = dark(r, c - 1);
        const bool right = dark(r, c);
        if (left != right) edges_.push_back({{double(c), double(r)}, {double(c), double(r + 1)}, left ? Vec2{1, 0} : Vec2{-1, 0}});
      }
    // Horizontal grid lines v = r between cells (r-1, c) and (r, c).
    for (int r = 0; r <= kMarkerCells; ++r)
      for (int c = 0; c < kMarkerCells; ++c) {
        const bool up = dark(r - 1, c);
        const bool down = dark(r, c);
        if (up != down) edges_.push_back({{double(c), double(r)}, {double(c + 1), double(r)}, up ? Vec2{0, 1} : Vec2{0, -1}});
      }
  }

  /// 6-DOF fit of a marker pose (marker -> camera); returns the pose and its
  /// mean squared residual.
  std::pair<Pose, double> fit_pose(Pose pose, const Intrinsics& k, double size_m) const {
    const MarkerSpec spec{0, MarkerCode{}, size_m};
    const auto model = spec.corners();
    auto corners_of = [&](const Pose& p) {
      Quad q;
      for (std::size_t i = 0; i < 4; ++i) q[i] = project(k, p, model[i]);
      return q;
    };
    for (int outer = 0; outer < 3; ++outer) {
      const auto meas = measure(corners_of(pose), outer == 0 ? 2.0 : 1.0);
      if (meas.size() < 16) return {pose, std::numeric_limits<double>::infinity()};
      for (int it = 0; it < 10; ++it) {
        const auto [step, cost] = gauss_newton<6>(meas, [&](const std::array<double, 6>& d) {
          return corners_of(perturb_pose(pose, d));
        }, [&](const std::array<double, 6>& d) { pose = perturb_pose(pose, d); });
        if (step < 1e-9) break;
      }
    }
    return {pose, score(corners_of(pose))};
  }

  /// Final 6-DOF refinement against the thresholded pixel centres near each
  /// code edge. Every pixel wants to lie on its own side of the projected
  /// edge; a logistic margin loss places the edges in the middle of the set
  /// of poses consistent with the pixels.
  Pose fit_pose_pixels(Pose pose, const Intrinsics& k, double size_m) const {
    constexpr double kTau = 0.02;  // px
    const MarkerSpec spec{0, MarkerCode{}, size_m};
    const auto model = spec.corners();
    auto homography_of = [&](const Pose& p) {
      Quad q;
      for (std::size_t i = 0; i < 4; ++i) q[i] = project(k, p, model[i]);
      return model_to_image(q);
    };
    struct Sample {
      std::size_t edge;
      Vec2 centre;
      double label;  // +1 light, -1 dark
    };
    std::vector<Sample> samples;
    {
      const Mat3 h = homography_of(pose);
      const Mat3 hinv = h.inverse();
      double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
      for (Vec2 m : {Vec2{-0.5, -0.5}, Vec2{6.5, -0.5}, Vec2{6.5, 6.5}, Vec2{-0.5, 6.5}}) {
        const Vec2 p = apply_homography(h, m);
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
        max_x = std::max(max_x, p.x);
        max_y = std::max(max_y, p.y);
      }
      const double cell_px = std::sqrt(std::abs(tracker_detail::shoelace(std::array<Vec2, 4>{
                                 apply_homography(h, {0, 0}), apply_homography(h, {6, 0}),
                                 apply_homography(h, {6, 6}), apply_homography(h, {0, 6})}))) /
                             kMarkerCells;
      if (!(cell_px > 2.0)) return pose;
      const double band = std::min(0.45, 2.0 / cell_px);
      const int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
      const int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
      const int x1 = std::min(gray_.width() - 1, static_cast<int>(std::ceil(max_x)));
      const int y1 = std::min(gray_.height() - 1, static_cast<int>(std::ceil(max_y)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const Vec2 c{static_cast<double>(x), static_cast<double>(y)};
          const Vec2 m = apply_homography(hinv, c);
          for (std::size_t i = 0; i < edges_.size(); ++i) {
            const Edge& e = edges_[i];
            const bool vertical = e.a.x == e.b.x;
            const double across = vertical ? m.x - e.a.x : m.y - e.a.y;
            const double along = vertical ? m.y - e.a.y : m.x - e.a.x;
            if (std::abs(across) < band && along > 0.02 && along < 0.98) {
              samples.push_back({i, c, gray_.gray(x, y) < threshold_ ? -1.0 : 1.0});
            }
          }
        }
    }
    if (samples.size() < 32) return pose;

    auto loss_of = [&](const Pose& p) {
      const Mat3 h = homography_of(p);
      double l = 0.0;
      for (const Sample& s : samples) {
        const double z = -s.label * residual(h, edges_[s.edge], s.centre) / kTau;
        l += z > 30 ? z : std::log1p(std::exp(z));
      }
      return l;
    };
    double loss = loss_of(pose);
    double damping = 1e-3;
    for (int it = 0; it < 30; ++it) {
      const Mat3 h0 = homography_of(pose);
      std::vector<double> d0(samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) d0[i] = residual(h0, edges_[samples[i].edge], samples[i].centre);
      std::array<double, 42> aug{};
      std::vector<std::array<double, 6>> jac(samples.size());
      for (std::size_t p = 0; p < 6; ++p) {
        std::array<double, 6> d{};
        d[p] = 1e-7;
        const Mat3 hp = homography_of(perturb_pose(pose, d));
        for (std::size_t i = 0; i < samples.size(); ++i) {
          jac[i][p] = (residual(hp, edges_[samples[i].edge], samples[i].centre) - d0[i]) / 1e-7;
        }
      }
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const double m = samples[i].label * d0[i] / kTau;
        const double sig = 1.0 / (1.0 + std::exp(m));  // sigma(-m)
        const double g = -sig * samples[i].label / kTau;
        const double w = sig * (1.0 - sig) / (kTau * kTau);
        for (std::size_t a = 0; a < 6; ++a) {
          aug[a * 7 + 6] -= g * jac[i][a];
          for (std::size_t b = 0; b < 6; ++b) aug[a * 7 + b] += w * jac[i][a] * jac[i][b];
        }
      }
      for (std::size_t a = 0; a < 6; ++a) aug[a * 7 + a] = aug[a * 7 + a] * (1.0 + damping) + 1e-12;
      const auto delta = solve_linear<6>(aug);
      if (!delta) break;
      const Pose next = perturb_pose(pose, *delta);
      if (!(next.translation.z > 0.0)) break;
      const double next_loss = loss_of(next);
      if (next_loss < loss) {
        const double gain = loss - next_loss;
        pose = next;
        loss = next_loss;
        damping = std::max(1e-9, damping * 0.1);
        if (gain < 1e-9 * (1.0 + loss)) break;
      } else {
        damping *= 10.0;
        if (damping > 1e8) break;
      }
    }
    return centre_pose(pose, samples, homography_of);
  }

  /// Mean truncated squared edge residual over all expected samples; a
  /// sample without a nearby edge counts as a full outlier.
  double score(const Quad& corners) const {
    const Mat3 h = model_to_image(corners);
    double sum = 0.0;
    std::size_t expected = 0;
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      const Edge& e = edges_[i];
      const Vec2 a = apply_homography(h, e.a);
      const Vec2 b = apply_homography(h, e.b);
      const double len = norm(b - a);
      if (!(len > 1.0)) continue;
      const Vec2 mid_model = 0.5 * (e.a + e.b);
      Vec2 n = apply_homography(h, mid_model + 0.05 * e.dark_to_light) - apply_homography(h, mid_model);
      n = (1.0 / norm(n)) * n;
      const int samples = std::max(1, static_cast<int>(len));
      for (int k = 0; k < samples; ++k) {
        const double f = 0.15 + 0.7 * (k + 0.5) / samples;
        const Vec2 p = apply_homography(h, e.a + f * (e.b - e.a));
        const auto s = find_rising_edge(gray_, p, n, 1.0, threshold_);
        sum += s ? std::min(1.0, *s * *s) : 1.0;
        ++expected;
      }
    }
    return expected ? sum / static_cast<double>(expected) : std::numeric_limits<double>::infinity();
  }

 private:
  struct Edge {
    Vec2 a, b;           // model coordinates
    Vec2 dark_to_light;  // model-space direction crossing the edge from dark to light
  };
  struct Measurement {
    std::size_t edge;
    Vec2 point;  // image
  };

  static Mat3 model_to_image(const Quad& corners) { return square_to_quad(corners, kMarkerCells); }

  /// Image line of every edge as (point, unit normal towards the light side).
  std::vector<std::pair<Vec2, Vec2>> edge_lines(const Mat3& h) const {
    std::vector<std::pair<Vec2, Vec2>> out;
    out.reserve(edges_.size());
    for (const Edge& e : edges_) {
      const Vec2 a = apply_homography(h, e.a);
      const Vec2 d = apply_homography(h, e.b) - a;
      const double len = norm(d);
      Vec2 n{-d.y / len, d.x / len};
      const Vec2 mid_model = 0.5 * (e.a + e.b);
      const Vec2 probe = apply_homography(h, mid_model + 0.05 * e.dark_to_light) - apply_homography(h, mid_model);
      if (dot(n, probe) < 0) n = -1.0 * n;
      out.emplace_back(a, n);
    }
    return out;
  }

  /// Moves a pose that classifies every sample correctly to the middle of
  /// the consistent interval along each of its three least constrained
  /// directions. Poses inside that set render identical pixels, so the
  /// middle bounds the worst case error.
  template <typename Sample, typename HomographyOf>
  Pose centre_pose(Pose pose, const std::vector<Sample>& samples, HomographyOf homography_of) const {
    auto consistent = [&](const Pose& p) {
      if (!(p.translation.z > 0.0)) return false;
      const auto lines = edge_lines(homography_of(p));
      for (const Sample& s : samples) {
        const auto& [a, n] = lines[s.edge];
        if (!(s.label * dot(s.centre - a, n) > 0.0)) return false;
      }
      return true;
    };
    if (!consistent(pose)) return pose;
    const double z = pose.translation.z;
    auto scaled = [z](const std::array<double, 6>& u, double s) {
      return std::array<double, 6>{s * u[0], s * u[1], s * u[2], s * z * u[3], s * z * u[4], s * z * u[5]};
    };

    std::vector<double> jtj(36, 0.0);
    {
      const auto l0 = edge_lines(homography_of(pose));
      std::vector<std::vector<std::pair<Vec2, Vec2>>> lp;
      for (std::size_t p = 0; p < 6; ++p) {
        std::array<double, 6> u{};
        u[p] = 1.0;
        lp.push_back(edge_lines(homography_of(perturb_pose(pose, scaled(u, 1e-6)))));
      }
      for (const Sample& s : samples) {
        std::array<double, 6> g{};
        const double r0 = dot(s.centre - l0[s.edge].first, l0[s.edge].second);
        for (std::size_t p = 0; p < 6; ++p) g[p] = (dot(s.centre - lp[p][s.edge].first, lp[p][s.edge].second) - r0) / 1e-6;
        for (std::size_t a = 0; a < 6; ++a)
          for (std::size_t b = 0; b < 6; ++b) jtj[a * 6 + b] += g[a] * g[b];
      }
    }
    std::vector<double> vecs;
    const std::vector<double> vals = detail::jacobi_eigen(jtj, vecs, 6);
    std::array<std::size_t, 6> order{0, 1, 2, 3, 4, 5};
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });

    for (std::size_t k = 0; k < 3; ++k) {
      std::array<double, 6> u{};
      for (std::size_t p = 0; p < 6; ++p) u[p] = vecs[p * 6 + order[k]];
      const Pose base = pose;
      auto reach = [&](double sign) {
        double lo = 0.0, hi = 1e-5;
        while (hi < 0.5 && consistent(perturb_pose(base, scaled(u, sign * hi)))) {
          lo = hi;
          hi *= 2.0;
        }
        if (hi >= 0.5) return lo;
        for (int it = 0; it < 24; ++it) {
          const double mid = 0.5 * (lo + hi);
          (consistent(perturb_pose(base, scaled(u, sign * mid))) ? lo : hi) = mid;
        }
        return lo;
      };
      const double shift = 0.5 * (reach(1.0) - reach(-1.0));
      pose = perturb_pose(base, scaled(u, shift));
    }
    return pose;
  }

  /// Signed image distance of p from the image of edge e (positive on the
  /// light side).
  double residual(const Mat3& h, const Edge& e, Vec2 p) const {
    const Vec2 a = apply_homography(h, e.a);
    const Vec2 b = apply_homography(h, e.b);
    const Vec2 d = b - a;
    const double len = norm(d);
    Vec2 n{-d.y / len, d.x / len};
    const Vec2 mid_model = 0.5 * (e.a + e.b);
    const Vec2 probe = apply_homography(h, mid_model + 0.05 * e.dark_to_light) - apply_homography(h, mid_model);
    if (dot(n, probe) < 0) n = -1.0 * n;
    return dot(p - a, n);
  }

  std::vector<Measurement> measure(const Quad& corners, double window) const {
    const Mat3 h = model_to_image(corners);
    std::vector<Measurement> out;
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      const Edge& e = edges_[i];
      const Vec2 a = apply_homography(h, e.a);
      const Vec2 b = apply_homography(h, e.b);
      const double len = norm(b - a);
      if (!(len > 1.0)) continue;
      const Vec2 mid_model = 0.5 * (e.a + e.b);
      Vec2 n = apply_homography(h, mid_model + 0.05 * e.dark_to_light) - apply_homography(h, mid_model);
      const double nn = norm(n);
      if (!(nn > 0)) continue;
      n = (1.0 / nn) * n;
      const int samples = std::max(1, static_cast<int>(len));
      for (int k = 0; k < samples; ++k) {
        const double f = 0.15 + 0.7 * (k + 0.5) / samples;
        const Vec2 p = apply_homography(h, e.a + f * (e.b - e.a));
        if (auto s = find_rising_edge(gray_, p, n, window, threshold_)) out.push_back({i, p + *s * n});
      }
    }
    return out;
  }

  /// One damped Gauss-Newton update with a forward-difference Jacobian.
  /// corners_at maps a parameter increment to the outer corners; commit
  /// applies an accepted increment. Returns (step size, mean squared residual
  /// before the step).
  template <std::size_t P, typename CornersAt, typename Commit>
  std::pair<double, double> gauss_newton(const std::vector<Measurement>& meas, CornersAt corners_at,
                                         Commit commit) const {
    const std::size_t n = meas.size();
    const std::array<double, P> zero{};
    const Mat3 h0 = model_to_image(corners_at(zero));
    std::vector<double> r0(n);
    double cost = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < n; ++k) {
      r0[k] = residual(h0, edges_[meas[k].edge], meas[k].point);
      if (std::abs(r0[k]) <= 1.0) {
        cost += r0[k] * r0[k];
        ++used;
      }
    }
    cost = used ? cost / static_cast<double>(used) : std::numeric_limits<double>::infinity();

    constexpr double kEps = 1e-6;
    std::vector<std::array<double, P>> jac(n);
    for (std::size_t p = 0; p < P; ++p) {
      std::array<double, P> d{};
      d[p] = kEps;
      const Mat3 hp = model_to_image(corners_at(d));
      for (std::size_t k = 0; k < n; ++k) jac[k][p] = (residual(hp, edges_[meas[k].edge], meas[k].point) - r0[k]) / kEps;
    }
    std::array<double, P * (P + 1)> aug{};
    for (std::size_t k = 0; k < n; ++k) {
      if (std::abs(r0[k]) > 1.0) continue;  // gross outlier
      for (std::size_t i = 0; i < P; ++i) {
        aug[i * (P + 1) + P] -= jac[k][i] * r0[k];
        for (std::size_t j = 0; j < P; ++j) aug[i * (P + 1) + j] += jac[k][i] * jac[k][j];
      }
    }
    for (std::size_t i = 0; i < P; ++i) aug[i * (P + 1) + i] *= 1.0 + 1e-9;
    const auto solved = solve_linear<P>(aug);
    if (!solved) return {0.0, cost};
    const std::array<double, P>& delta = *solved;
    double step = 0.0;
    for (double d : delta) step = std::max(step, std::abs(d));
    if (!std::isfinite(step)) return {0.0, cost};
    // Reject steps that move any corner by more than two pixels.
    const Quad before = corners_at(zero);
    const Quad after = corners_at(delta);
    for (std::size_t i = 0; i < 4; ++i)
      if (norm(after[i] - before[i]) > 2.0) return {0.0, cost};
    commit(delta);
    return {step, cost};
  }

  const Frame& gray_;
  double threshold_;
  std::vector<Edge> edges_;
};

/// Marker plane (X, Z) homography -> marker pose. pose_from_homography
/// returns the pose of a z = 0 plane with coordinates (u, v) = (X, Z);
/// marker coordinates relate by (u, v, w) = (X, Z, -Y).
inline Pose marker_pose_from_homography(const Mat3& h, const Intrinsics& k) {
  const Pose planar = pose_from_homography(h, k);
  static const Mat3 kMarkerToPlanar{{1, 0, 0, 0, 0, 1, 0, -1, 0}};
  return {planar.rotation * kMarkerToPlanar, planar.translation};
}

}  // namespace tracker_detail

/// Full detection on a pyramid. Candidates come from the coarsest level;
/// corners are refined and codes decoded on level 0. Sorted by marker id.
/// The other member of the planar two-fold ambiguity: the marker normal
/// mirrored about the line of sight to the marker centre.
inline Pose flipped_pose(const Pose& marker_to_camera) {
  const Vec3 v = normalized(marker_to_camera.translation);
  const Vec3 n = marker_to_camera.rotation.column(1);
  const Vec3 m = 2.0 * dot(n, v) * v - n;
  const Vec3 axis = cross(n, m);
  const double s = norm(axis);
  if (!(s > 1e-12)) return marker_to_camera;
  const double angle = std::atan2(s, dot(n, m));
  return {axis_angle(axis, angle) * marker_to_camera.rotation, marker_to_camera.translation};
}

inline std::vector<Detection> detect(const FramePyramid& pyramid, std::span<const MarkerBase> bases,
                                     const Intrinsics& k, const DetectorParams& params = {}) {
  using namespace tracker_detail;
  std::vector<Detection> out;
  if (pyramid.levels.empty()) throw Error(ErrorCode::kInvalidArgument, "empty pyramid");
  if (std::none_of(bases.begin(), bases.end(), [](const MarkerBase& b) { return b.active; })) return out;

  const Frame& base = pyramid.base();
  const int level = pyramid.size() - 1;
  const double threshold =
      params.adaptive ? adaptive_threshold(base, params.adaptive_offset) : static_cast<double>(params.threshold);
  const int bin_threshold = static_cast<int>(std::ceil(threshold));
  const Frame binary = binarize(pyramid.coarsest(), bin_threshold);
  const double window = 2.0 * static_cast<double>(1 << pyramid.size());

  for (const Quad& coarse : find_quads(binary)) {
    Quad q;
    for (std::size_t i = 0; i < 4; ++i) q[i] = {level_to_base(coarse[i].x, level), level_to_base(coarse[i].y, level)};
    auto refined = refine_quad(base, q, window, threshold);
    if (!refined) continue;
    refined = refine_quad(base, *refined, 2.0, threshold);
    if (!refined) continue;

    const auto decoded = decode(base, *refined, bases, threshold);
    if (!decoded || decoded->confidence < params.min_confidence) continue;

    // The printed top-left sits at refined[k] after k clockwise turns.
    Quad corners;
    for (std::size_t i = 0; i < 4; ++i) corners[i] = (*refined)[(i + static_cast<std::size_t>(decoded->rotation)) % 4];
    const auto model = decoded->spec.corners();
    std::array<Correspondence, 4> corr;
    for (std::size_t i = 0; i < 4; ++i) corr[i] = {{model[i].x, model[i].z}, corners[i]};
    Detection det;
    try {
      det.homography = solve_homography(corr);
      det.pose = marker_pose_from_homography(det.homography, k);
      if (params.model_refinement) {
        // Seed from both members of the planar ambiguity, settle each on the
        // corners, then on every code edge; keep the better edge fit.
        const EdgeModelFit fit(base, decoded->spec.code, threshold);
        std::optional<std::pair<Pose, double>> best;
        for (const Pose& seed : {det.pose, flipped_pose(det.pose)}) {
          const auto coarse = fit_pose_to_corners(seed, k, model, corners);
          if (!coarse) continue;
          auto fine = fit.fit_pose(coarse->first, k, decoded->spec.size_m);
          if (!(fine.first.translation.z > 0.0)) continue;
          if (!best || fine.second < best->second) best = fine;
        }
        if (best && std::isfinite(best->second)) {
          det.pose = fit.fit_pose_pixels(best->first, k, decoded->spec.size_m);
          for (std::size_t i = 0; i < 4; ++i) {
            corners[i] = project(k, det.pose, model[i]);
            corr[i].dst = corners[i];
          }
          det.homography = solve_homography(corr);
        }
      }
    } catch (const Error&) {
      continue;
    }
    det.marker_id = decoded->spec.id;
    det.corners_px = corners;
    det.confidence = decoded->confidence;
    det.rotation = decoded->rotation;

    auto same = std::find_if(out.begin(), out.end(), [&](const Detection& d) { return d.marker_id == det.marker_id; });
    if (same == out.end()) {
      out.push_back(det);
    } else if (std::abs(shoelace(det.corners_px)) > std::abs(shoelace(same->corners_px))) {
      *same = det;
    }
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.marker_id < b.marker_id; });
  return out;
}

}  // namespace solar_ar
