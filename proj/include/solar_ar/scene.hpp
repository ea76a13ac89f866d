#pragma once

// Manipulable scene objects and the touch gesture state machine: one finger
// drags an object across its horizontal plane, two fingers on the same
// object turn it about +Y. Only the first two touches take part.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "solar_ar/error.hpp"
#include "solar_ar/geometry.hpp"
#include "solar_ar/json_io.hpp"

namespace solar_ar {

enum class ObjectKind { kAnchorRoot, kDecoration };

struct SceneObject {
  std::string id;
  Vec3 position;
  double yaw = 0.0;  // about +Y, in (-pi, pi]
  double bounding_radius = 0.0;
  ObjectKind kind = ObjectKind::kDecoration;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

class Scene {
 public:
  void add(SceneObject obj) {
    if (obj.id.empty()) throw Error(ErrorCode::kInvalidArgument, "scene object needs an id");
    if (!(obj.bounding_radius > 0.0) || !std::isfinite(obj.bounding_radius)) {
      throw Error(ErrorCode::kInvalidArgument, "bounding radius must be positive");
    }
    if (!is_finite(obj.position)) throw Error(ErrorCode::kInvalidArgument, "object position not finite");
    if (find(obj.id)) throw Error(ErrorCode::kDuplicateId, "duplicate scene object " + obj.id);
    obj.yaw = wrap_angle(obj.yaw);
    objects_.push_back(std::move(obj));
  }

  const SceneObject* find(const std::string& id) const {
    for (const auto& o : objects_)
      if (o.id == id) return &o;
    return nullptr;
  }
  SceneObject* find(const std::string& id) {
    for (auto& o : objects_)
      if (o.id == id) return &o;
    return nullptr;
  }

  const SceneObject& at(const std::string& id) const {
    if (const SceneObject* o = find(id)) return *o;
    throw Error(ErrorCode::kUnknownName, "no scene object " + id);
  }

  const std::vector<SceneObject>& objects() const { return objects_; }

  friend bool operator==(const Scene&, const Scene&) = default;

 private:
  std::vector<SceneObject> objects_;
};

struct Hit {
  std::string object_id;
  double t = 0.0;
};

/// Nearest positive-t bounding-sphere hit; equal t goes to the smaller id.
inline std::optional<Hit> hit_test(const Scene& scene, const Ray& ray) {
  std::optional<Hit> best;
  for (const auto& o : scene.objects()) {
    const auto t = ray_sphere_intersect(ray, o.position, o.bounding_radius);
    if (!t) continue;
    if (!best || *t < best->t || (*t == best->t && o.id < best->object_id)) best = Hit{o.id, *t};
  }
  return best;
}

enum class TouchPhase { kDown, kMove, kUp };

struct TouchEvent {
  int touch_id = 0;
  TouchPhase phase = TouchPhase::kDown;
  Vec2 pixel;
  double t = 0.0;
};

struct Idle {
  friend bool operator==(const Idle&, const Idle&) = default;
};
struct Dragging {
  std::string object_id;
  PlaneZX grab_offset;  // plane intersection minus object (Z, X)
  int touch_id = 0;
  friend bool operator==(const Dragging&, const Dragging&) = default;
};
struct Rotating {
  std::string object_id;
  double prev_line_angle = 0.0;
  friend bool operator==(const Rotating&, const Rotating&) = default;
};

using GestureMode = std::variant<Idle, Dragging, Rotating>;

struct GestureState {
  GestureMode mode = Idle{};
  std::map<int, Vec2> active_touches;  // every touch currently down
  /// The touches that drive manipulation, at most two, ascending. A touch
  /// is relevant if it went down while fewer than two relevant touches were
  /// down; any other touch stays extra until it lifts.
  std::vector<int> relevant;

  friend bool operator==(const GestureState&, const GestureState&) = default;
};

inline const char* to_string(TouchPhase p) {
  switch (p) {
    case TouchPhase::kDown: return "down";
    case TouchPhase::kMove: return "move";
    case TouchPhase::kUp: return "up";
  }
  return "?";
}

inline TouchPhase touch_phase_from_string(const std::string& s) {
  if (s == "down") return TouchPhase::kDown;
  if (s == "move") return TouchPhase::kMove;
  if (s == "up") return TouchPhase::kUp;
  throw Error(ErrorCode::kParse, "unknown touch phase '" + s + "'");
}

/// Screen angle of the line from the first to the second pixel, measured
/// counter-clockwise as seen on screen (y grows downward).
inline double screen_line_angle(Vec2 from, Vec2 to) { return std::atan2(-(to.y - from.y), to.x - from.x); }

namespace scene_detail {

inline std::optional<PlaneZX> plane_point(const Intrinsics& k, const Pose& camera_to_world, Vec2 px, double plane_y) {
  const auto hit = ray_plane_intersect(unproject(k, camera_to_world, px), plane_y);
  if (!hit) return std::nullopt;
  return PlaneZX{hit->point.z, hit->point.x};
}

inline std::optional<std::string> picked(const Scene& scene, const Intrinsics& k, const Pose& camera_to_world,
                                         Vec2 px) {
  if (auto h = hit_test(scene, unproject(k, camera_to_world, px))) return h->object_id;
  return std::nullopt;
}

/// Drag setup on the object under a touch; idle when the plane is missed.
inline GestureMode grab(const Scene& scene, const std::string& id, int touch_id, Vec2 px, const Intrinsics& k,
                        const Pose& camera_to_world) {
  const SceneObject& o = scene.at(id);
  const auto p = plane_point(k, camera_to_world, px, o.position.y);
  if (!p) return Idle{};
  return Dragging{id, PlaneZX{p->z - o.position.z, p->x - o.position.x}, touch_id};
}

inline double relevant_line_angle(const GestureState& s) {
  return screen_line_angle(s.active_touches.at(s.relevant[0]), s.active_touches.at(s.relevant[1]));
}

}  // namespace scene_detail

/// One step of the gesture state machine. camera_to_world is the camera pose
/// in the frame the scene objects live in.
inline std::pair<GestureState, Scene> handle_touch(GestureState state, Scene scene, const TouchEvent& ev,
                                                   const Pose& camera_to_world, const Intrinsics& k) {
  using namespace scene_detail;
  if (!is_finite(ev.pixel) || !k.contains(ev.pixel)) {
    throw Error(ErrorCode::kOutOfBounds, "touch outside the frame");
  }
  const bool known = state.active_touches.contains(ev.touch_id);
  const bool relevant = std::find(state.relevant.begin(), state.relevant.end(), ev.touch_id) != state.relevant.end();

  switch (ev.phase) {
    case TouchPhase::kDown: {
      if (known) throw Error(ErrorCode::kProtocol, "touch " + std::to_string(ev.touch_id) + " is already down");
      state.active_touches[ev.touch_id] = ev.pixel;
      if (state.relevant.size() >= 2) return {state, scene};  // extra touch
      state.relevant.push_back(ev.touch_id);
      std::sort(state.relevant.begin(), state.relevant.end());

      if (state.relevant.size() == 1) {
        const auto id = picked(scene, k, camera_to_world, ev.pixel);
        state.mode = id ? grab(scene, *id, ev.touch_id, ev.pixel, k, camera_to_world) : GestureMode{Idle{}};
        return {state, scene};
      }
      // Second relevant touch.
      std::optional<std::string> target;
      if (const auto* d = std::get_if<Dragging>(&state.mode)) {
        target = d->object_id;
      } else {
        const int other = state.relevant[0] == ev.touch_id ? state.relevant[1] : state.relevant[0];
        const auto a = picked(scene, k, camera_to_world, state.active_touches.at(other));
        const auto b = picked(scene, k, camera_to_world, ev.pixel);
        if (a && b && *a == *b) target = a;
      }
      if (target) state.mode = Rotating{*target, relevant_line_angle(state)};
      return {state, scene};
    }

    case TouchPhase::kMove: {
      if (!known) throw Error(ErrorCode::kProtocol, "move for unknown touch " + std::to_string(ev.touch_id));
      state.active_touches[ev.touch_id] = ev.pixel;
      if (!relevant) return {state, scene};
      if (auto* d = std::get_if<Dragging>(&state.mode); d && d->touch_id == ev.touch_id) {
        SceneObject* o = scene.find(d->object_id);
        if (const auto p = plane_point(k, camera_to_world, ev.pixel, o->position.y)) {
          o->position.z = p->z - d->grab_offset.z;
          o->position.x = p->x - d->grab_offset.x;
        }
      } else if (auto* r = std::get_if<Rotating>(&state.mode)) {
        const double angle = relevant_line_angle(state);
        SceneObject* o = scene.find(r->object_id);
        o->yaw = wrap_angle(o->yaw + wrap_angle(angle - r->prev_line_angle));
        r->prev_line_angle = angle;
      }
      return {state, scene};
    }

    case TouchPhase::kUp: {
      if (!known) throw Error(ErrorCode::kProtocol, "up for unknown touch " + std::to_string(ev.touch_id));
      state.active_touches.erase(ev.touch_id);
      if (!relevant) return {state, scene};
      std::erase(state.relevant, ev.touch_id);
      if (const auto* r = std::get_if<Rotating>(&state.mode)) {
        if (state.relevant.size() == 1) {
          const int rest = state.relevant[0];
          state.mode = grab(scene, r->object_id, rest, state.active_touches.at(rest), k, camera_to_world);
        } else {
          state.mode = Idle{};
        }
      } else if (const auto* d = std::get_if<Dragging>(&state.mode); d && d->touch_id == ev.touch_id) {
        state.mode = Idle{};
      }
      return {state, scene};
    }
  }
  return {state, scene};
}

/// Touch event stamped with its script time.
struct ScriptedTouch {
  double t_ms = 0.0;
  TouchEvent event;
};

/// {"events":[{"t_ms":0,"touch_id":0,"phase":"down","x":320,"y":240}, ...]}
/// Events are ordered by t_ms; ties keep file order.
inline std::vector<ScriptedTouch> gesture_script_from_json(const Json& j) {
  auto events = json_detail::guarded("gesture script", [&] {
    std::vector<ScriptedTouch> out;
    for (const Json& e : j.at("events")) {
      ScriptedTouch s;
      s.t_ms = finite_number(e.at("t_ms"), "t_ms");
      s.event.touch_id = e.at("touch_id").get<int>();
      s.event.phase = touch_phase_from_string(e.at("phase").get<std::string>());
      s.event.pixel = {finite_number(e.at("x"), "x"), finite_number(e.at("y"), "y")};
      s.event.t = s.t_ms / 1000.0;
      out.push_back(s);
    }
    return out;
  });
  std::stable_sort(events.begin(), events.end(),
                   [](const ScriptedTouch& a, const ScriptedTouch& b) { return a.t_ms < b.t_ms; });
  return events;
}

inline std::vector<ScriptedTouch> load_gesture_script(const std::filesystem::path& path) {
  return gesture_script_from_json(load_json_file(path));
}

inline Json to_json(const std::vector<ScriptedTouch>& events) {
  Json arr = Json::array();
  for (const auto& s : events) {
    arr.push_back({{"t_ms", s.t_ms},
                   {"touch_id", s.event.touch_id},
                   {"phase", to_string(s.event.phase)},
                   {"x", s.event.pixel.x},
                   {"y", s.event.pixel.y}});
  }
  return {{"events", arr}};
}

}  // namespace solar_ar
