#pragma once

// The per-frame loop: capture, pyramid, tracking (marker mode) or odometry
// (anchor mode), touch input, solar time, overlay. Also the JSON config, the
// trace format and the headless runner.

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "solar_ar/camera_source.hpp"
#include "solar_ar/compositor.hpp"
#include "solar_ar/error.hpp"
#include "solar_ar/frame.hpp"
#include "solar_ar/geometry.hpp"
#include "solar_ar/image_io.hpp"
#include "solar_ar/json_io.hpp"
#include "solar_ar/marker_base.hpp"
#include "solar_ar/marker_tracker.hpp"
#include "solar_ar/scene.hpp"
#include "solar_ar/solar_system.hpp"

namespace solar_ar {

enum class Mode { kMarker, kAnchor };

inline const char* to_string(Mode m) { return m == Mode::kMarker ? "marker" : "anchor"; }

inline Mode mode_from_string(const std::string& s) {
  if (s == "marker") return Mode::kMarker;
  if (s == "anchor") return Mode::kAnchor;
  throw Error(ErrorCode::kParse, "unknown mode '" + s + "'");
}

inline constexpr const char* kAnchorRootId = "solar_system";

struct SessionConfig {
  std::variant<SyntheticConfig, DirectoryConfig> source;
  Intrinsics intrinsics;
  std::vector<MarkerBase> marker_bases;
  Catalog catalog;
  Mode mode = Mode::kMarker;
  double time_scale = 1.0;
  int pyramid_levels = kDefaultPyramidLevels;
  double fps = 30.0;
  DetectorParams detector;
  /// Camera pose in the world for anchor mode (and for lifting marker poses
  /// into the world). Defaults to the synthetic trajectory, else identity.
  std::optional<Trajectory> odometry;
  Vec3 anchor_offset;       // root position in the anchor frame
  double anchor_yaw = 0.0;  // root yaw
  double pick_radius = 0.3;  // m, bounding sphere of the root
  std::optional<std::string> serve;
  std::vector<ScriptedTouch> script;
  std::optional<std::filesystem::path> out_dir;
  std::optional<int> frames;
  bool fixed_clock = false;

  void validate() const {
    intrinsics.validate();
    if (mode == Mode::kMarker && marker_bases.empty()) {
      throw Error(ErrorCode::kMode, "marker mode needs at least one marker base");
    }
    if (!(time_scale >= 0.0) || !std::isfinite(time_scale)) {
      throw Error(ErrorCode::kInvalidArgument, "time scale must be >= 0");
    }
    if (pyramid_levels < 1) throw Error(ErrorCode::kInvalidArgument, "pyramid_levels must be >= 1");
    if (!(fps > 0.0) || !std::isfinite(fps)) throw Error(ErrorCode::kInvalidArgument, "fps must be positive");
    if (!(pick_radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "pick radius must be positive");
    if (frames && *frames < 0) throw Error(ErrorCode::kInvalidArgument, "frames must be >= 0");
    if (catalog.empty()) throw Error(ErrorCode::kInvalidArgument, "catalog has no bodies");
  }
};

namespace session_detail {

/// A config entry that is either a path (relative to the config file) or
/// the document itself.
inline Json file_or_inline(const Json& j, const std::filesystem::path& dir) {
  if (j.is_string()) return load_json_file(dir / j.get<std::string>());
  return j;
}

}  // namespace session_detail

/// Config file layout:
/// {
///   "camera": {"width":640,"height":480,"fx":600,"fy":600},
///   "source": {"type":"synthetic","world":"world.json","trajectory":"trajectory.json"}
///          or {"type":"directory","path":"frames","fps":30},
///   "marker_bases": ["markers.json"], "catalog": "catalog.json",
///   "mode": "marker", "time_scale": 1.0, "pyramid_levels": 3, "fps": 30,
///   "odometry": "trajectory.json",
///   "anchor": {"offset":[0,0,0], "yaw":0, "pick_radius":0.3},
///   "detector": {"threshold":128, "adaptive":false, "adaptive_offset":16},
///   "script": "gestures.json", "out_dir": "out", "frames": 60, "serve": "127.0.0.1:8080"
/// }
/// Any file entry may be given inline instead of as a path.
inline SessionConfig session_config_from_json(const Json& j, const std::filesystem::path& dir) {
  using session_detail::file_or_inline;
  return json_detail::guarded("config", [&] {
    SessionConfig c;
    const Json& cam = j.at("camera");
    const int w = cam.at("width").get<int>();
    const int h = cam.at("height").get<int>();
    c.intrinsics = intrinsics_from_json(cam, w, h);

    for (const Json& b : j.value("marker_bases", Json::array())) {
      c.marker_bases.push_back(marker_base_from_json(file_or_inline(b, dir)));
    }
    c.catalog = catalog_from_json(file_or_inline(j.at("catalog"), dir));

    const Json& src = j.at("source");
    const std::string type = src.value("type", "synthetic");
    if (type == "synthetic") {
      SyntheticConfig s;
      s.world = world_from_json(file_or_inline(src.at("world"), dir));
      resolve_codes(s.world, c.marker_bases);
      if (src.contains("trajectory")) {
        s.trajectory = trajectory_from_json(file_or_inline(src.at("trajectory"), dir));
      } else if (s.world.trajectory) {
        s.trajectory = *s.world.trajectory;
      }
      c.source = std::move(s);
    } else if (type == "directory") {
      DirectoryConfig d;
      d.path = dir / src.at("path").get<std::string>();
      d.fps = src.contains("fps") ? finite_number(src.at("fps"), "source.fps") : 30.0;
      c.source = std::move(d);
    } else {
      throw Error(ErrorCode::kParse, "unknown source type '" + type + "'");
    }

    if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("time_scale")) c.time_scale = finite_number(j.at("time_scale"), "time_scale");
    c.pyramid_levels = j.value("pyramid_levels", kDefaultPyramidLevels);
    if (j.contains("fps")) c.fps = finite_number(j.at("fps"), "fps");
    if (j.contains("odometry")) c.odometry = trajectory_from_json(file_or_inline(j.at("odometry"), dir));
    if (j.contains("anchor")) {
      const Json& a = j.at("anchor");
      if (a.contains("offset")) c.anchor_offset = vec3_from_json(a.at("offset"), "anchor.offset");
      if (a.contains("yaw")) c.anchor_yaw = finite_number(a.at("yaw"), "anchor.yaw");
      if (a.contains("pick_radius")) c.pick_radius = finite_number(a.at("pick_radius"), "anchor.pick_radius");
    }
    if (j.contains("detector")) {
      const Json& d = j.at("detector");
      c.detector.threshold = d.value("threshold", c.detector.threshold);
      c.detector.adaptive = d.value("adaptive", c.detector.adaptive);
      c.detector.adaptive_offset = d.value("adaptive_offset", c.detector.adaptive_offset);
      c.detector.min_confidence = d.value("min_confidence", c.detector.min_confidence);
      c.detector.model_refinement = d.value("model_refinement", c.detector.model_refinement);
    }
    if (j.contains("script")) c.script = gesture_script_from_json(file_or_inline(j.at("script"), dir));
    if (j.contains("out_dir")) c.out_dir = dir / j.at("out_dir").get<std::string>();
    if (j.contains("frames")) c.frames = j.at("frames").get<int>();
    if (j.contains("serve")) c.serve = j.at("serve").get<std::string>();
    c.fixed_clock = j.value("fixed_clock", false);
    c.validate();
    return c;
  });
}

inline SessionConfig load_session_config(const std::filesystem::path& path) {
  return session_config_from_json(load_json_file(path), path.parent_path());
}

struct SessionState {
  std::uint64_t frame_seq = 0;  // ticks completed
  Mode mode = Mode::kMarker;
  GestureState gesture;
  Scene scene;  // objects live in the anchor frame
  SystemState system;
  std::vector<Detection> last_detections;
  Pose camera_pose_world;
  Pose anchor_pose;  // anchor frame -> world
  bool lost = false;
  std::optional<double> t_prev;
};

struct BodyView {
  std::string name;
  Vec3 world;
  std::optional<Vec2> screen;  // nullopt when behind the camera
  double r_px = 0.0;
};

struct RejectedTouch {
  std::size_t index = 0;  // position among the touches applied this tick
  TouchEvent event;
  std::string reason;
};

struct TickResult {
  std::uint64_t seq = 0;
  double t = 0.0;
  Frame frame;
  Mode mode = Mode::kMarker;
  bool lost = false;
  double time_scale = 1.0;
  double sim_time = 0.0;
  Pose camera_pose_world;
  Pose anchor_pose;
  Pose root_pose_world;  // anchor root in the world
  double root_yaw = 0.0;
  std::vector<Detection> detections;
  std::vector<BodyView> bodies;
  std::vector<RejectedTouch> rejected;
};

class Session {
 public:
  explicit Session(SessionConfig cfg)
      : config_(std::move(cfg)),
        source_(std::visit([&](const auto& s) { return CameraSource(s, config_.intrinsics); }, config_.source)) {
    config_.validate();
    if (!config_.odometry) {
      const auto* syn = source_.synthetic();
      config_.odometry = syn ? syn->trajectory : Trajectory{};
    }
    state_.mode = config_.mode;
    state_.scene.add(SceneObject{kAnchorRootId, config_.anchor_offset, config_.anchor_yaw, config_.pick_radius,
                                 ObjectKind::kAnchorRoot});
    state_.system = SystemState(config_.catalog, 0.0, config_.time_scale);
    source_.start();
  }

  const SessionConfig& config() const { return config_; }
  const SessionState& state() const { return state_; }
  Mode mode() const { return state_.mode; }
  const CameraSource& source() const { return source_; }

  /// Takes effect at the next tick.
  void set_mode(Mode m) {
    if (m == Mode::kMarker && config_.marker_bases.empty()) {
      throw Error(ErrorCode::kMode, "marker mode needs at least one marker base");
    }
    pending_mode_ = m;
  }

  /// Takes effect at the next tick.
  void set_time_scale(double s) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw Error(ErrorCode::kInvalidArgument, "time scale must be >= 0");
    pending_scale_ = s;
  }

  /// Applied at the next tick, in arrival order.
  void enqueue_touch(const TouchEvent& ev) { touches_.push_back(ev); }
  std::size_t pending_touches() const { return touches_.size(); }

  TickResult tick(double t) {
    if (!std::isfinite(t)) throw Error(ErrorCode::kInvalidArgument, "tick time not finite");
    if (state_.t_prev && t < *state_.t_prev) throw Error(ErrorCode::kInvalidArgument, "tick time went backwards");
    if (pending_mode_) {
      state_.mode = *pending_mode_;
      pending_mode_.reset();
    }
    if (pending_scale_) {
      state_.system.set_time_scale(*pending_scale_);
      pending_scale_.reset();
    }
    const Intrinsics& k = config_.intrinsics;
    const std::uint64_t seq = state_.frame_seq;

    Frame frame = source_.capture(t);
    frame.set_stamp(seq, t);
    state_.camera_pose_world = config_.odometry->pose_at(t);

    if (state_.mode == Mode::kMarker) {
      const FramePyramid pyramid = build_pyramid(frame, config_.pyramid_levels);
      state_.last_detections = detect(pyramid, config_.marker_bases, k, config_.detector);
      if (!state_.last_detections.empty()) {
        state_.anchor_pose = state_.camera_pose_world * state_.last_detections.front().pose;
        state_.lost = false;
      } else {
        state_.lost = true;
      }
    } else {
      state_.last_detections.clear();
      state_.lost = false;
    }

    TickResult out;
    const Pose camera_in_anchor = state_.anchor_pose.inverse() * state_.camera_pose_world;
    for (std::size_t index = 0; !touches_.empty(); ++index) {
      const TouchEvent ev = touches_.front();
      touches_.pop_front();
      try {
        auto [g, s] = handle_touch(state_.gesture, state_.scene, ev, camera_in_anchor, k);
        state_.gesture = std::move(g);
        state_.scene = std::move(s);
      } catch (const Error& e) {
        out.rejected.push_back({index, ev, e.what()});
      }
    }

    const double dt = state_.t_prev ? t - *state_.t_prev : 0.0;
    state_.system = step(state_.system, dt, config_.catalog);
    state_.t_prev = t;

    const SceneObject& root = state_.scene.at(kAnchorRootId);
    const Pose root_local{rotation_y(root.yaw), root.position};
    const Pose root_world = state_.anchor_pose * root_local;
    const Pose world_to_camera = state_.camera_pose_world.inverse();
    std::vector<RenderItem> items;
    for (const BodySpec& b : config_.catalog) {
      const Vec3 world = root_world.apply(state_.system.position(b.name));
      const RenderItem item = make_render_item(world, b.body_radius, b.color, state_.camera_pose_world);
      items.push_back(item);
      BodyView view{b.name, world, std::nullopt, 0.0};
      if (const auto disk = project_disk(item, world_to_camera, k)) {
        view.screen = disk->center;
        view.r_px = disk->radius_px;
      }
      out.bodies.push_back(std::move(view));
    }
    Frame composed = render_overlay(frame, items, state_.camera_pose_world, k);
    for (const Detection& d : state_.last_detections) composed = draw_detection_outline(composed, d);
    composed.set_stamp(seq, t);

    out.seq = seq;
    out.t = t;
    out.frame = std::move(composed);
    out.mode = state_.mode;
    out.lost = state_.lost;
    out.time_scale = state_.system.time_scale();
    out.sim_time = state_.system.sim_time();
    out.camera_pose_world = state_.camera_pose_world;
    out.anchor_pose = state_.anchor_pose;
    out.root_pose_world = root_world;
    out.root_yaw = root.yaw;
    out.detections = state_.last_detections;
    ++state_.frame_seq;
    return out;
  }

 private:
  SessionConfig config_;
  CameraSource source_;
  SessionState state_;
  std::optional<Mode> pending_mode_;
  std::optional<double> pending_scale_;
  std::deque<TouchEvent> touches_;
};

// ---------------------------------------------------------------------------
// Trace

inline constexpr int kTraceVersion = 1;

inline Json to_json(const Detection& d) {
  Json corners = Json::array();
  for (Vec2 c : d.corners_px) corners.push_back(to_json(c));
  return {{"id", d.marker_id},
          {"rotation", d.rotation},
          {"confidence", d.confidence},
          {"corners", corners},
          {"pose", to_json(d.pose)}};
}

inline std::string frame_hash(const Frame& f) { return hex64(fnv1a64(encode_ppm(f))); }

/// One trace entry; the frame is identified by the FNV-1a hash of its PPM
/// encoding.
inline Json trace_entry(const TickResult& r) {
  Json dets = Json::array();
  for (const Detection& d : r.detections) dets.push_back(to_json(d));
  Json bodies = Json::array();
  for (const BodyView& b : r.bodies) bodies.push_back({{"name", b.name}, {"world", to_json(b.world)}});
  return {{"seq", r.seq},
          {"t", r.t},
          {"mode", to_string(r.mode)},
          {"lost", r.lost},
          {"time_scale", r.time_scale},
          {"sim_time", r.sim_time},
          {"camera", to_json(r.camera_pose_world)},
          {"anchor", {{"pose", to_json(r.anchor_pose)},
                      {"root", {{"pos", to_json(r.root_pose_world.translation)}, {"yaw", r.root_yaw}}}}},
          {"detections", dets},
          {"bodies", bodies},
          {"frame_hash", frame_hash(r.frame)}};
}

inline Json make_trace(const SessionConfig& cfg, const Json& ticks) {
  return {{"version", kTraceVersion}, {"fps", cfg.fps}, {"ticks", ticks}};
}

// ---------------------------------------------------------------------------
// Headless runs

/// Tick index a script event belongs to: the first tick whose time is at or
/// after the event time.
inline std::uint64_t script_tick(double t_ms, double fps) {
  const double k = std::ceil(t_ms * fps / 1000.0 - 1e-9);
  return k <= 0.0 ? 0 : static_cast<std::uint64_t>(k);
}

inline double tick_time(std::uint64_t seq, double fps) { return static_cast<double>(seq) / fps; }

/// Number of ticks a headless run covers: the configured frame count, else
/// enough to replay the whole script.
inline std::uint64_t headless_frames(const SessionConfig& cfg) {
  if (cfg.frames) return static_cast<std::uint64_t>(*cfg.frames);
  std::uint64_t n = 1;
  for (const auto& e : cfg.script) n = std::max(n, script_tick(e.t_ms, cfg.fps) + 1);
  return n;
}

struct HeadlessResult {
  Json trace;
  std::vector<std::string> frame_hashes;
};

/// Replays the script against ticks at the configured rate. Writes
/// frame_%05d.ppm and trace.json to out_dir when one is given. Rejected
/// touches are errors.
inline HeadlessResult replay(const SessionConfig& cfg) {
  Session session(cfg);
  HeadlessResult result;
  Json ticks = Json::array();
  const std::uint64_t frames = headless_frames(cfg);
  if (cfg.out_dir) std::filesystem::create_directories(*cfg.out_dir);
  std::size_t next = 0;
  for (std::uint64_t seq = 0; seq < frames; ++seq) {
    while (next < cfg.script.size() && script_tick(cfg.script[next].t_ms, cfg.fps) <= seq) {
      session.enqueue_touch(cfg.script[next].event);
      ++next;
    }
    const TickResult r = session.tick(tick_time(seq, cfg.fps));
    if (!r.rejected.empty()) {
      throw Error(ErrorCode::kProtocol, "script touch " + std::to_string(r.rejected.front().event.touch_id) +
                                            " rejected: " + r.rejected.front().reason);
    }
    const auto ppm = encode_ppm(r.frame);
    result.frame_hashes.push_back(hex64(fnv1a64(ppm)));
    if (cfg.out_dir) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%05llu.ppm", static_cast<unsigned long long>(seq));
      write_file(*cfg.out_dir / name, ppm);
    }
    ticks.push_back(trace_entry(r));
  }
  result.trace = make_trace(cfg, ticks);
  if (cfg.out_dir) {
    const std::string text = result.trace.dump(2) + "\n";
    write_file(*cfg.out_dir / "trace.json",
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  return result;
}

/// Exit status 0 on success; diagnostics go to err.
inline int run_headless(const SessionConfig& cfg, std::ostream& err = std::cerr) {
  try {
    if (!cfg.out_dir) throw Error(ErrorCode::kInvalidArgument, "headless runs need an output directory");
    replay(cfg);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace solar_ar
