#pragma once

// JSON wire messages exchanged with the companion UI, one per websocket
// text message.
//
// server -> client
//   {"type":"frame","seq":n,"w":640,"h":480,"encoding":"png-base64","data":"..."}
//   {"type":"scene","seq":n,"mode":"marker","lost":false,"time_scale":1.0,
//    "anchor":{"pos":[x,y,z],"yaw":r},
//    "bodies":[{"name":"Earth","world":[x,y,z],"screen":[u,v],"r_px":k}]}
//   {"type":"error","reason":"parse"}
// client -> server
//   {"type":"touch","touch_id":0,"phase":"down","x":320,"y":240}
//   {"type":"set_mode","mode":"anchor"}
//   {"type":"set_time_scale","value":2.5}

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "solar_ar/image_io.hpp"
#include "solar_ar/json_io.hpp"
#include "solar_ar/scene.hpp"
#include "solar_ar/session.hpp"

namespace solar_ar {

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t v = std::uint32_t{bytes[i]} << 16;
    if (rest == 2) v |= std::uint32_t{bytes[i + 1]} << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

/// Strict decoder (padding required); nullopt on malformed input.
inline std::optional<std::vector<std::uint8_t>> base64_decode(std::string_view s) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (s.size() % 4 != 0) return std::nullopt;
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    const bool last = i + 4 == s.size();
    const int pad = last ? (s[i + 3] == '=') + (s[i + 2] == '=') : 0;
    if (pad == 1 && s[i + 2] == '=') return std::nullopt;
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = s[i + static_cast<std::size_t>(k)];
      int d = 0;
      if (k >= 4 - pad) {
        if (c != '=') return std::nullopt;
      } else {
        d = value(c);
        if (d < 0) return std::nullopt;
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

struct TouchMessage {
  TouchEvent event;
};
struct SetModeMessage {
  Mode mode = Mode::kMarker;
};
struct SetTimeScaleMessage {
  double value = 1.0;
};
using ClientMessage = std::variant<TouchMessage, SetModeMessage, SetTimeScaleMessage>;

/// Reason codes: "parse" (not JSON), "unknown_type", "invalid" (bad or
/// missing fields); the server adds "mode", "touch" and "busy".
struct WireError {
  std::string reason;
  std::string detail;
};

inline std::string error_message(const WireError& e) {
  Json j{{"type", "error"}, {"reason", e.reason}};
  if (!e.detail.empty()) j["detail"] = e.detail;
  return j.dump();
}

inline std::variant<ClientMessage, WireError> parse_client_message(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    return WireError{"parse", e.what()};
  }
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    return WireError{"invalid", "message needs a string 'type'"};
  }
  const std::string type = j.at("type").get<std::string>();
  try {
    if (type == "touch") {
      TouchMessage m;
      m.event.touch_id = j.at("touch_id").get<int>();
      m.event.phase = touch_phase_from_string(j.at("phase").get<std::string>());
      m.event.pixel = {finite_number(j.at("x"), "x"), finite_number(j.at("y"), "y")};
      return ClientMessage{m};
    }
    if (type == "set_mode") return ClientMessage{SetModeMessage{mode_from_string(j.at("mode").get<std::string>())}};
    if (type == "set_time_scale") {
      const double v = finite_number(j.at("value"), "value");
      if (!(v >= 0.0)) return WireError{"invalid", "time scale must be >= 0"};
      return ClientMessage{SetTimeScaleMessage{v}};
    }
  } catch (const Json::exception& e) {
    return WireError{"invalid", e.what()};
  } catch (const Error& e) {
    return WireError{"invalid", e.what()};
  }
  return WireError{"unknown_type", type};
}

inline std::string to_wire(const ClientMessage& m) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TouchMessage>) {
          return Json{{"type", "touch"},
                      {"touch_id", v.event.touch_id},
                      {"phase", to_string(v.event.phase)},
                      {"x", v.event.pixel.x},
                      {"y", v.event.pixel.y}}
              .dump();
        } else if constexpr (std::is_same_v<T, SetModeMessage>) {
          return Json{{"type", "set_mode"}, {"mode", to_string(v.mode)}}.dump();
        } else {
          return Json{{"type", "set_time_scale"}, {"value", v.value}}.dump();
        }
      },
      m);
}

inline std::string frame_message(const TickResult& r) {
  return Json{{"type", "frame"},
              {"seq", r.seq},
              {"w", r.frame.width()},
              {"h", r.frame.height()},
              {"encoding", "png-base64"},
              {"data", base64_encode(encode_png(r.frame))}}
      .dump();
}

inline Json scene_json(const TickResult& r) {
  Json bodies = Json::array();
  for (const BodyView& b : r.bodies) {
    bodies.push_back({{"name", b.name},
                      {"world", to_json(b.world)},
                      {"screen", b.screen ? to_json(*b.screen) : Json(nullptr)},
                      {"r_px", b.r_px}});
  }
  return {{"type", "scene"},
          {"seq", r.seq},
          {"mode", to_string(r.mode)},
          {"lost", r.lost},
          {"time_scale", r.time_scale},
          {"sim_time", r.sim_time},
          {"anchor", {{"pos", to_json(r.root_pose_world.translation)}, {"yaw", r.root_yaw}}},
          {"bodies", bodies}};
}

inline std::string scene_message(const TickResult& r) { return scene_json(r).dump(); }

}  // namespace solar_ar
