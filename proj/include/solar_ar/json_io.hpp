#pragma once

// JSON conversions shared by the file formats (world, trajectory, marker
// base, catalog, config, trace, wire messages).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "solar_ar/error.hpp"
#include "solar_ar/frame.hpp"
#include "solar_ar/geometry.hpp"

namespace solar_ar {

using Json = nlohmann::json;

inline Json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

namespace json_detail {

template <typename F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, std::string(what) + ": " + e.what());
  }
}

}  // namespace json_detail

inline double finite_number(const Json& j, const char* what) {
  if (!j.is_number()) throw Error(ErrorCode::kParse, std::string(what) + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw Error(ErrorCode::kParse, std::string(what) + ": not finite");
  return v;
}

inline Vec3 vec3_from_json(const Json& j, const char* what = "vec3") {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kParse, std::string(what) + ": expected [x,y,z]");
  return {finite_number(j[0], what), finite_number(j[1], what), finite_number(j[2], what)};
}

inline Json to_json(Vec3 v) { return Json::array({v.x, v.y, v.z}); }
inline Json to_json(Vec2 v) { return Json::array({v.x, v.y}); }
inline Json to_json(const Mat3& m) {
  Json a = Json::array();
  for (double v : m.m) a.push_back(v);
  return a;
}

inline Rgb rgb_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kParse, "colour: expected [r,g,b]");
  Rgb c;
  std::uint8_t* dst[3] = {&c.r, &c.g, &c.b};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!j[i].is_number_integer() || j[i].get<int>() < 0 || j[i].get<int>() > 255) {
      throw Error(ErrorCode::kParse, "colour components must be integers in 0..255");
    }
    *dst[i] = static_cast<std::uint8_t>(j[i].get<int>());
  }
  return c;
}

inline Json to_json(Rgb c) { return Json::array({c.r, c.g, c.b}); }

/// Camera-style look-at pose (camera -> world): z toward target, y down.
inline Pose look_at(Vec3 eye, Vec3 target, Vec3 up) {
  const Vec3 z = normalized(target - eye);
  const Vec3 x = normalized(cross(z, up));
  const Vec3 y = cross(z, x);
  return {Mat3::from_columns(x, y, z), eye};
}

/// Accepted forms:
///   {"t":[x,y,z], "R":[9 row-major]}
///   {"t":[x,y,z], "q":[w,x,y,z]}
///   {"t":[x,y,z], "axis":[x,y,z], "angle_deg":a}
///   {"look_at":{"eye":[..],"target":[..],"up":[..]}}
/// Missing rotation means identity; missing t means zero.
inline Pose pose_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, "pose: expected an object");
  if (j.contains("look_at")) {
    const Json& l = j.at("look_at");
    const Vec3 up = l.contains("up") ? vec3_from_json(l.at("up"), "look_at.up") : Vec3{0, 1, 0};
    return look_at(vec3_from_json(l.at("eye"), "look_at.eye"),
                   vec3_from_json(l.at("target"), "look_at.target"), up);
  }
  Pose p;
  if (j.contains("t")) p.translation = vec3_from_json(j.at("t"), "pose.t");
  if (j.contains("R")) {
    const Json& r = j.at("R");
    if (!r.is_array() || r.size() != 9) throw Error(ErrorCode::kParse, "pose.R: expected 9 numbers");
    Mat3 m;
    for (std::size_t i = 0; i < 9; ++i) m.m[i] = finite_number(r[i], "pose.R");
    p.rotation = nearest_rotation(m);
  } else if (j.contains("q")) {
    const Json& q = j.at("q");
    if (!q.is_array() || q.size() != 4) throw Error(ErrorCode::kParse, "pose.q: expected [w,x,y,z]");
    p.rotation = Quaternion{finite_number(q[0], "q"), finite_number(q[1], "q"), finite_number(q[2], "q"),
                            finite_number(q[3], "q")}
                     .to_matrix();
  } else if (j.contains("axis")) {
    const double deg = finite_number(j.at("angle_deg"), "pose.angle_deg");
    p.rotation = axis_angle(vec3_from_json(j.at("axis"), "pose.axis"), deg * std::numbers::pi / 180.0);
  }
  return p;
}

inline Json to_json(const Pose& p) {
  return Json{{"R", to_json(p.rotation)}, {"t", to_json(p.translation)}};
}

inline Intrinsics intrinsics_from_json(const Json& j, int width, int height) {
  Intrinsics k;
  k.fx = finite_number(j.at("fx"), "intrinsics.fx");
  k.fy = finite_number(j.at("fy"), "intrinsics.fy");
  k.cx = j.contains("cx") ? finite_number(j.at("cx"), "intrinsics.cx") : 0.5 * (width - 1);
  k.cy = j.contains("cy") ? finite_number(j.at("cy"), "intrinsics.cy") : 0.5 * (height - 1);
  k.width = j.value("width", width);
  k.height = j.value("height", height);
  k.validate();
  return k;
}

inline Json to_json(const Intrinsics& k) {
  return Json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

}  // namespace solar_ar
