#pragma once

// Camera sources: a synthetic renderer of a marker world seen along a
// scripted trajectory, and a directory of still images played at a fixed
// frame rate.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "solar_ar/error.hpp"
#include "solar_ar/frame.hpp"
#include "solar_ar/geometry.hpp"
#include "solar_ar/image_io.hpp"
#include "solar_ar/json_io.hpp"
#include "solar_ar/marker_base.hpp"

namespace solar_ar {

struct Keyframe {
  double t = 0.0;
  Pose pose;
};

/// Keyframed poses; translation interpolates linearly, rotation by
/// normalized quaternion interpolation. Clamped outside the key range.
class Trajectory {
 public:
  Trajectory() : keys_{Keyframe{0.0, Pose::identity()}} {}

  explicit Trajectory(std::vector<Keyframe> keys) : keys_(std::move(keys)) {
    if (keys_.empty()) throw Error(ErrorCode::kInvalidArgument, "trajectory needs a keyframe");
    std::stable_sort(keys_.begin(), keys_.end(), [](const Keyframe& a, const Keyframe& b) { return a.t < b.t; });
  }

  static Trajectory constant(const Pose& p) { return Trajectory({Keyframe{0.0, p}}); }

  Pose pose_at(double t) const {
    if (!std::isfinite(t)) throw Error(ErrorCode::kInvalidArgument, "trajectory time not finite");
    if (t <= keys_.front().t) return keys_.front().pose;
    if (t >= keys_.back().t) return keys_.back().pose;
    const auto hi = std::upper_bound(keys_.begin(), keys_.end(), t,
                                     [](double v, const Keyframe& k) { return v < k.t; });
    const auto lo = hi - 1;
    const double span = hi->t - lo->t;
    const double s = span > 0.0 ? (t - lo->t) / span : 0.0;
    const Quaternion q = nlerp(Quaternion::from_matrix(lo->pose.rotation),
                               Quaternion::from_matrix(hi->pose.rotation), s);
    const Vec3 a = lo->pose.translation;
    const Vec3 b = hi->pose.translation;
    return {q.to_matrix(), a + s * (b - a)};
  }

  const std::vector<Keyframe>& keys() const { return keys_; }

 private:
  std::vector<Keyframe> keys_;
};

inline Trajectory trajectory_from_json(const Json& j) {
  return json_detail::guarded("trajectory", [&] {
    const Json& keys = j.is_array() ? j : j.at("keyframes");
    std::vector<Keyframe> out;
    for (const Json& k : keys) out.push_back({finite_number(k.at("t"), "keyframe.t"), pose_from_json(k.at("pose"))});
    return Trajectory(std::move(out));
  });
}

struct WorldMarker {
  int id = 0;
  double size_m = 0.0;
  std::optional<MarkerCode> code;  // resolved from marker bases when absent
  Pose pose;                       // marker -> world
};

struct SyntheticWorld {
  std::vector<WorldMarker> markers;
  Rgb background{200, 200, 200};
  std::optional<Trajectory> trajectory;
};

inline SyntheticWorld world_from_json(const Json& j) {
  return json_detail::guarded("world", [&] {
    SyntheticWorld w;
    if (j.contains("background")) w.background = rgb_from_json(j.at("background"));
    for (const Json& m : j.value("markers", Json::array())) {
      WorldMarker wm;
      wm.id = m.at("id").get<int>();
      wm.size_m = finite_number(m.at("size_m"), "size_m");
      if (!(wm.size_m > 0.0)) throw Error(ErrorCode::kInvalidArgument, "marker size must be positive");
      if (m.contains("bits")) wm.code = MarkerCode::parse(m.at("bits").get<std::string>());
      wm.pose = m.contains("pose") ? pose_from_json(m.at("pose")) : Pose::identity();
      w.markers.push_back(wm);
    }
    if (j.contains("trajectory")) w.trajectory = trajectory_from_json(j.at("trajectory"));
    return w;
  });
}

/// Fills missing marker codes from the given bases (first base that knows
/// the id wins).
inline void resolve_codes(SyntheticWorld& world, const std::vector<MarkerBase>& bases) {
  for (auto& m : world.markers) {
    if (m.code) continue;
    for (const auto& b : bases) {
      if (const MarkerSpec* s = b.find(m.id)) {
        m.code = s->code;
        break;
      }
    }
    if (!m.code) throw Error(ErrorCode::kInvalidArgument, "no code known for world marker " + std::to_string(m.id));
  }
}

/// Renders the world from a camera pose (camera -> world). Markers are
/// perspective-correct textured quads sampled at pixel centres with nearest
/// neighbour lookup; the printed face is visible only from its +Y side.
inline Frame render_world(const SyntheticWorld& world, const Intrinsics& k, const Pose& camera_to_world) {
  Frame frame = Frame::filled_rgba(k.width, k.height, world.background);
  std::vector<double> depth;
  if (world.markers.size() > 1) {
    depth.assign(static_cast<std::size_t>(k.width) * static_cast<std::size_t>(k.height),
                 std::numeric_limits<double>::infinity());
  }
  const Pose world_to_camera = camera_to_world.inverse();

  for (const WorldMarker& m : world.markers) {
    if (!m.code) throw Error(ErrorCode::kInvalidArgument, "world marker without code");
    const Pose cam_to_marker = m.pose.inverse() * camera_to_world;
    const Vec3 o = cam_to_marker.translation;
    if (!(o.y > 0.0)) continue;

    // Pixel bounding box of the quad; fall back to the full frame when a
    // corner is behind the camera.
    int x0 = 0, y0 = 0, x1 = k.width - 1, y1 = k.height - 1;
    const double h = 0.5 * m.size_m;
    bool all_front = true;
    double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
    for (Vec3 c : {Vec3{-h, 0, -h}, Vec3{h, 0, -h}, Vec3{h, 0, h}, Vec3{-h, 0, h}}) {
      const Vec3 pc = world_to_camera.apply(m.pose.apply(c));
      if (!(pc.z > 1e-9)) {
        all_front = false;
        break;
      }
      const double u = k.fx * pc.x / pc.z + k.cx;
      const double v = k.fy * pc.y / pc.z + k.cy;
      minx = std::min(minx, u);
      maxx = std::max(maxx, u);
      miny = std::min(miny, v);
      maxy = std::max(maxy, v);
    }
    if (all_front) {
      if (maxx < -1 || maxy < -1 || minx > k.width || miny > k.height) continue;
      x0 = std::max(0, static_cast<int>(std::floor(minx)) - 1);
      y0 = std::max(0, static_cast<int>(std::floor(miny)) - 1);
      x1 = std::min(k.width - 1, static_cast<int>(std::ceil(maxx)) + 1);
      y1 = std::min(k.height - 1, static_cast<int>(std::ceil(maxy)) + 1);
    }

    const Mat3& r = cam_to_marker.rotation;
    const double cell = m.size_m / kMarkerCells;
    for (int y = y0; y <= y1; ++y) {
      const double vy = (y - k.cy) / k.fy;
      for (int x = x0; x <= x1; ++x) {
        const Vec3 d = r * Vec3{(x - k.cx) / k.fx, vy, 1.0};
        if (!(d.y < 0.0)) continue;
        const double t = -o.y / d.y;  // also the camera-frame depth
        const double px = o.x + t * d.x + h;
        const double pz = o.z + t * d.z + h;
        if (px < 0.0 || pz < 0.0 || px >= m.size_m || pz >= m.size_m) continue;
        const int col = std::min(kMarkerCells - 1, static_cast<int>(px / cell));
        const int row = std::min(kMarkerCells - 1, static_cast<int>(pz / cell));
        if (!depth.empty()) {
          double& dz = depth[static_cast<std::size_t>(y) * static_cast<std::size_t>(k.width) +
                             static_cast<std::size_t>(x)];
          if (!(t < dz)) continue;
          dz = t;
        }
        const std::uint8_t v = marker_cell_white(*m.code, row, col) ? 255 : 0;
        frame.set_rgb(x, y, Rgb{v, v, v});
      }
    }
  }
  return frame;
}

struct SyntheticConfig {
  SyntheticWorld world;
  Trajectory trajectory;  // camera -> world
};

struct DirectoryConfig {
  std::filesystem::path path;
  double fps = 30.0;
};

/// Projected ground truth kept for tests.
struct MarkerTruth {
  int id = 0;
  Pose marker_to_camera;
  std::array<Vec2, 4> corners_px{};  // TL, TR, BR, BL
  bool in_front = false;
};

class CameraSource {
 public:
  CameraSource(SyntheticConfig cfg, Intrinsics k) : kind_(std::move(cfg)), intrinsics_(k) {
    intrinsics_.validate();
    check_size();
  }

  CameraSource(DirectoryConfig cfg, Intrinsics k) : intrinsics_(k) {
    intrinsics_.validate();
    check_size();
    if (!(cfg.fps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "directory fps must be positive");
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(cfg.path)) {
      throw Error(ErrorCode::kIo, "not a directory: " + cfg.path.string());
    }
    for (const auto& e : std::filesystem::directory_iterator(cfg.path)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(ErrorCode::kDecode, "directory has no PNG/PPM images");
    load_image(files.front());  // at least one image must decode
    kind_ = Directory{std::move(cfg), std::move(files)};
  }

  void start() { running_ = true; }
  void stop() { running_ = false; }
  bool running() const { return running_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }
  bool is_synthetic() const { return std::holds_alternative<SyntheticConfig>(kind_); }

  const SyntheticConfig* synthetic() const { return std::get_if<SyntheticConfig>(&kind_); }

  /// Index of the image a directory source shows at time t.
  std::size_t image_index(double t) const {
    const auto& d = std::get<Directory>(kind_);
    const double idx = std::floor(std::max(0.0, t) * d.cfg.fps);
    return static_cast<std::size_t>(std::min(idx, static_cast<double>(d.files.size() - 1)));
  }

  /// RGBA8 frame at time t; pure in (configuration, t).
  Frame capture(double t) const {
    if (!running_) throw Error(ErrorCode::kSourceStopped, "camera source is not started");
    Frame f;
    if (const auto* s = std::get_if<SyntheticConfig>(&kind_)) {
      f = render_world(s->world, intrinsics_, s->trajectory.pose_at(t));
    } else {
      const auto& d = std::get<Directory>(kind_);
      Frame img = load_image(d.files[image_index(t)]);
      if (img.format() == PixelFormat::kGray8) img = gray_to_rgba(img);
      if (img.width() != intrinsics_.width || img.height() != intrinsics_.height) {
        throw Error(ErrorCode::kDecode, "image size does not match the source intrinsics");
      }
      f = std::move(img);
    }
    f.set_stamp(0, t);
    return f;
  }

  std::vector<MarkerTruth> ground_truth(double t) const {
    const auto* s = synthetic();
    if (!s) throw Error(ErrorCode::kInvalidArgument, "ground truth only exists for synthetic sources");
    const Pose world_to_camera = s->trajectory.pose_at(t).inverse();
    std::vector<MarkerTruth> out;
    for (const auto& m : s->world.markers) {
      MarkerTruth truth;
      truth.id = m.id;
      truth.marker_to_camera = world_to_camera * m.pose;
      truth.in_front = true;
      MarkerSpec spec{m.id, m.code.value_or(MarkerCode{}), m.size_m};
      const auto corners = spec.corners();
      for (std::size_t i = 0; i < 4; ++i) {
        const Vec3 c = truth.marker_to_camera.apply(corners[i]);
        if (!(c.z > 0.0)) {
          truth.in_front = false;
          continue;
        }
        truth.corners_px[i] = project(intrinsics_, truth.marker_to_camera, corners[i]);
      }
      out.push_back(truth);
    }
    return out;
  }

  static Frame gray_to_rgba(const Frame& g) {
    Frame f(g.width(), g.height(), PixelFormat::kRgba8);
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) {
        const std::uint8_t v = g.gray(x, y);
        f.set_rgb(x, y, Rgb{v, v, v});
      }
    return f;
  }

 private:
  struct Directory {
    DirectoryConfig cfg;
    std::vector<std::filesystem::path> files;
  };

  void check_size() const {
    if (intrinsics_.width < kMinPyramidSide || intrinsics_.height < kMinPyramidSide) {
      throw Error(ErrorCode::kInvalidArgument, "sources must produce frames of at least 8x8");
    }
  }

  std::variant<SyntheticConfig, Directory> kind_;
  Intrinsics intrinsics_;
  bool running_ = false;
};

}  // namespace solar_ar
