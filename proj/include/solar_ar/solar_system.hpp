#pragma once

// Catalog-driven hierarchical circular orbits. Positions are anchor-local
// and evaluated analytically from the simulation time.

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "solar_ar/error.hpp"
#include "solar_ar/frame.hpp"
#include "solar_ar/geometry.hpp"
#include "solar_ar/json_io.hpp"

namespace solar_ar {

struct BodySpec {
  std::string name;
  std::optional<std::string> parent;
  double orbit_radius = 0.0;  // m
  double period = 1.0;        // s of simulation time
  double body_radius = 0.0;   // m
  Rgb color;
  double phase0 = 0.0;  // rad
};

using Catalog = std::vector<BodySpec>;

/// Enforces unique names, known parents, an acyclic parent relation and the
/// numeric ranges.
inline void validate(const Catalog& specs) {
  std::map<std::string, const BodySpec*> by_name;
  for (const auto& b : specs) {
    if (b.name.empty()) throw Error(ErrorCode::kInvalidArgument, "body needs a name");
    if (!by_name.emplace(b.name, &b).second) throw Error(ErrorCode::kDuplicateId, "duplicate body " + b.name);
    if (!(b.orbit_radius >= 0.0) || !std::isfinite(b.orbit_radius)) {
      throw Error(ErrorCode::kInvalidArgument, b.name + ": orbit radius must be >= 0");
    }
    if (b.orbit_radius > 0.0 && (!(b.period > 0.0) || !std::isfinite(b.period))) {
      throw Error(ErrorCode::kInvalidArgument, b.name + ": orbiting body needs a positive period");
    }
    if (!(b.body_radius > 0.0) || !std::isfinite(b.body_radius)) {
      throw Error(ErrorCode::kInvalidArgument, b.name + ": body radius must be positive");
    }
    if (!std::isfinite(b.phase0)) throw Error(ErrorCode::kInvalidArgument, b.name + ": phase not finite");
  }
  for (const auto& b : specs) {
    std::set<std::string> seen{b.name};
    const BodySpec* cur = &b;
    while (cur->parent) {
      const auto it = by_name.find(*cur->parent);
      if (it == by_name.end()) {
        throw Error(ErrorCode::kUnknownName, cur->name + ": unknown parent " + *cur->parent);
      }
      if (!seen.insert(it->first).second) throw Error(ErrorCode::kCyclicParent, "parent cycle through " + b.name);
      cur = it->second;
    }
  }
}

/// {"bodies":[{"name":"Sun","parent":null,"orbit_radius_m":0,"period_s":1,
///             "body_radius_m":0.05,"color":[255,200,64],"phase0_rad":0}]}
inline Catalog catalog_from_json(const Json& j) {
  Catalog specs = json_detail::guarded("catalog", [&] {
    Catalog out;
    for (const Json& b : j.at("bodies")) {
      BodySpec s;
      s.name = b.at("name").get<std::string>();
      if (b.contains("parent") && !b.at("parent").is_null()) s.parent = b.at("parent").get<std::string>();
      s.orbit_radius = finite_number(b.at("orbit_radius_m"), "orbit_radius_m");
      s.period = b.contains("period_s") ? finite_number(b.at("period_s"), "period_s") : 1.0;
      s.body_radius = finite_number(b.at("body_radius_m"), "body_radius_m");
      s.color = rgb_from_json(b.at("color"));
      s.phase0 = b.contains("phase0_rad") ? finite_number(b.at("phase0_rad"), "phase0_rad") : 0.0;
      out.push_back(std::move(s));
    }
    return out;
  });
  validate(specs);
  return specs;
}

inline Catalog load_catalog(const std::filesystem::path& path) { return catalog_from_json(load_json_file(path)); }

inline Json to_json(const Catalog& specs) {
  Json bodies = Json::array();
  for (const auto& b : specs) {
    bodies.push_back({{"name", b.name},
                      {"parent", b.parent ? Json(*b.parent) : Json(nullptr)},
                      {"orbit_radius_m", b.orbit_radius},
                      {"period_s", b.period},
                      {"body_radius_m", b.body_radius},
                      {"color", to_json(b.color)},
                      {"phase0_rad", b.phase0}});
  }
  return {{"bodies", bodies}};
}

/// Orbit angle phase0 + 2 pi t / period; the time is reduced modulo the
/// period first so that large times keep their precision.
inline double orbit_angle(const BodySpec& b, double sim_time) {
  return b.phase0 + 2.0 * std::numbers::pi * (std::fmod(sim_time, b.period) / b.period);
}

inline const BodySpec& find_body(const Catalog& specs, const std::string& name) {
  for (const auto& b : specs)
    if (b.name == name) return b;
  throw Error(ErrorCode::kUnknownName, "no body named " + name);
}

inline Vec3 body_position(const Catalog& specs, const std::string& name, double sim_time) {
  const BodySpec& b = find_body(specs, name);
  const Vec3 parent = b.parent ? body_position(specs, *b.parent, sim_time) : Vec3{};
  if (b.orbit_radius == 0.0) return parent;
  const double theta = orbit_angle(b, sim_time);
  return parent + Vec3{b.orbit_radius * std::cos(theta), 0.0, b.orbit_radius * std::sin(theta)};
}

/// Simulation clock. Real time elapsed since the last time-scale change is
/// kept as an unevaluated double-double sum, so the simulation time depends
/// only on the total real time of a constant-scale segment and not on how it
/// was split into steps.
class SystemState {
 public:
  SystemState() = default;
  SystemState(const Catalog& specs, double sim_time, double time_scale)
      : segment_start_(sim_time), time_scale_(time_scale), sim_time_(sim_time) {
    if (!std::isfinite(sim_time)) throw Error(ErrorCode::kInvalidArgument, "sim time not finite");
    check_scale(time_scale);
    recompute(specs);
  }

  double sim_time() const { return sim_time_; }
  double time_scale() const { return time_scale_; }
  const std::map<std::string, Vec3>& positions() const { return positions_; }
  const Vec3& position(const std::string& name) const {
    const auto it = positions_.find(name);
    if (it == positions_.end()) throw Error(ErrorCode::kUnknownName, "no body named " + name);
    return it->second;
  }

  /// Starts a new constant-scale segment at the current simulation time.
  void set_time_scale(double scale) {
    check_scale(scale);
    segment_start_ = sim_time_;
    real_hi_ = 0.0;
    real_lo_ = 0.0;
    time_scale_ = scale;
  }

  friend bool operator==(const SystemState&, const SystemState&) = default;

 private:
  friend SystemState step(SystemState state, double dt_real, const Catalog& specs);

  static void check_scale(double s) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw Error(ErrorCode::kInvalidArgument, "time scale must be >= 0");
  }

  void advance(double dt) {
    // Double-double accumulation (TwoSum followed by renormalisation).
    const double s = real_hi_ + dt;
    const double bp = s - real_hi_;
    const double e = (real_hi_ - (s - bp)) + (dt - bp) + real_lo_;
    real_hi_ = s + e;
    real_lo_ = e - (real_hi_ - s);
    sim_time_ = segment_start_ + (real_hi_ * time_scale_ + real_lo_ * time_scale_);
  }

  void recompute(const Catalog& specs) {
    positions_.clear();
    for (const auto& b : specs) positions_[b.name] = body_position(specs, b.name, sim_time_);
  }

  double segment_start_ = 0.0;
  double real_hi_ = 0.0;
  double real_lo_ = 0.0;
  double time_scale_ = 1.0;
  double sim_time_ = 0.0;
  std::map<std::string, Vec3> positions_;
};

inline SystemState step(SystemState state, double dt_real, const Catalog& specs) {
  if (!(dt_real >= 0.0) || !std::isfinite(dt_real)) throw Error(ErrorCode::kInvalidArgument, "dt must be >= 0");
  state.advance(dt_real);
  state.recompute(specs);
  return state;
}

}  // namespace solar_ar
