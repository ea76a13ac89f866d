#pragma once

// Fiducial design and the marker base.
//
// A marker is a 6x6 grid of square cells: a one-cell black ring around a
// 4x4 binary code (white = 1). In the marker frame the marker lies in the
// plane Y = 0 with +Y pointing out of the printed face; cell columns run
// along +X and rows along +Z, so the decoded top-left corner is
// (-s/2, 0, -s/2) and corners go clockwise TL, TR, BR, BL when the face is
// viewed from +Y.

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "solar_ar/error.hpp"
#include "solar_ar/frame.hpp"
#include "solar_ar/geometry.hpp"
#include "solar_ar/json_io.hpp"

namespace solar_ar {

inline constexpr int kMarkerCells = 6;
inline constexpr int kCodeCells = 4;

/// 4x4 code, bit (r * 4 + c) set when interior cell (r, c) is white.
class MarkerCode {
 public:
  constexpr MarkerCode() = default;
  constexpr explicit MarkerCode(std::uint16_t bits) : bits_(bits) {}

  /// 16 characters of '0'/'1', row-major.
  static MarkerCode parse(std::string_view s) {
    if (s.size() != 16) throw Error(ErrorCode::kParse, "marker bits must have 16 characters");
    std::uint16_t b = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      if (s[i] == '1') {
        b = static_cast<std::uint16_t>(b | (1u << i));
      } else if (s[i] != '0') {
        throw Error(ErrorCode::kParse, "marker bits must be '0' or '1'");
      }
    }
    return MarkerCode(b);
  }

  constexpr bool cell(int r, int c) const { return (bits_ >> (r * kCodeCells + c)) & 1u; }
  constexpr std::uint16_t bits() const { return bits_; }

  /// Grid turned 90 degrees clockwise as seen on the printed face.
  constexpr MarkerCode rotated_cw() const {
    std::uint16_t out = 0;
    for (int r = 0; r < kCodeCells; ++r)
      for (int c = 0; c < kCodeCells; ++c)
        if (cell(kCodeCells - 1 - c, r)) out = static_cast<std::uint16_t>(out | (1u << (r * kCodeCells + c)));
    return MarkerCode(out);
  }

  constexpr MarkerCode rotated_cw(int k) const {
    MarkerCode m = *this;
    for (int i = 0; i < ((k % 4) + 4) % 4; ++i) m = m.rotated_cw();
    return m;
  }

  std::string to_string() const {
    std::string s(16, '0');
    for (std::size_t i = 0; i < 16; ++i)
      if ((bits_ >> i) & 1u) s[i] = '1';
    return s;
  }

  friend constexpr bool operator==(MarkerCode, MarkerCode) = default;

 private:
  std::uint16_t bits_ = 0;
};

/// True when the cell (row, col) of the full 6x6 grid is white.
inline bool marker_cell_white(MarkerCode code, int row, int col) {
  if (row <= 0 || col <= 0 || row >= kMarkerCells - 1 || col >= kMarkerCells - 1) return false;
  return code.cell(row - 1, col - 1);
}

struct MarkerSpec {
  int id = 0;
  MarkerCode code;
  double size_m = 0.0;

  /// Corners in the marker frame: TL, TR, BR, BL.
  std::array<Vec3, 4> corners() const {
    const double h = 0.5 * size_m;
    return {Vec3{-h, 0, -h}, Vec3{h, 0, -h}, Vec3{h, 0, h}, Vec3{-h, 0, h}};
  }
};

struct MarkerBase {
  std::string name;
  std::vector<MarkerSpec> markers;
  bool active = true;

  const MarkerSpec* find(int id) const {
    for (const auto& m : markers)
      if (m.id == id) return &m;
    return nullptr;
  }
};

/// Enforces the base invariants: non-empty name and list, positive sizes,
/// unique ids, and no code equal to any rotation of another spec's code.
inline void validate(const MarkerBase& base) {
  if (base.name.empty()) throw Error(ErrorCode::kInvalidArgument, "marker base needs a name");
  if (base.markers.empty()) throw Error(ErrorCode::kInvalidArgument, "marker base has no markers");
  std::set<int> ids;
  for (const auto& m : base.markers) {
    if (m.id < 0) throw Error(ErrorCode::kInvalidArgument, "marker ids must be non-negative");
    if (!(m.size_m > 0.0) || !std::isfinite(m.size_m)) {
      throw Error(ErrorCode::kInvalidArgument, "marker size must be positive");
    }
    if (!ids.insert(m.id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate marker id " + std::to_string(m.id));
    }
  }
  for (std::size_t i = 0; i < base.markers.size(); ++i) {
    for (std::size_t j = i + 1; j < base.markers.size(); ++j) {
      for (int k = 0; k < 4; ++k) {
        if (base.markers[i].code.rotated_cw(k) == base.markers[j].code) {
          throw Error(ErrorCode::kRotationAmbiguity,
                      "markers " + std::to_string(base.markers[i].id) + " and " +
                          std::to_string(base.markers[j].id) + " are rotations of each other");
        }
      }
    }
  }
}

inline MarkerBase marker_base_from_json(const Json& j) {
  MarkerBase base = json_detail::guarded("marker base", [&] {
    MarkerBase b;
    b.name = j.at("name").get<std::string>();
    b.active = j.value("active", true);
    for (const Json& m : j.at("markers")) {
      MarkerSpec spec;
      spec.id = m.at("id").get<int>();
      spec.size_m = finite_number(m.at("size_m"), "size_m");
      spec.code = MarkerCode::parse(m.at("bits").get<std::string>());
      b.markers.push_back(spec);
    }
    return b;
  });
  validate(base);
  return base;
}

inline Json to_json(const MarkerBase& base) {
  Json markers = Json::array();
  for (const auto& m : base.markers) {
    markers.push_back({{"id", m.id}, {"size_m", m.size_m}, {"bits", m.code.to_string()}});
  }
  return {{"name", base.name}, {"active", base.active}, {"markers", markers}};
}

inline MarkerBase load_marker_base(const std::filesystem::path& path) {
  return marker_base_from_json(load_json_file(path));
}

inline MarkerBase set_active(MarkerBase base, bool active) {
  base.active = active;
  return base;
}

/// Square GRAY8 image of the marker, side_px / 6 pixels per cell.
inline Frame render_marker(const MarkerSpec& spec, int side_px) {
  if (side_px < 48 || side_px % kMarkerCells != 0) {
    throw Error(ErrorCode::kInvalidArgument, "marker side must be >= 48 px and divisible by 6");
  }
  const int cell = side_px / kMarkerCells;
  Frame f(side_px, side_px, PixelFormat::kGray8, std::uint8_t{0});
  for (int y = 0; y < side_px; ++y)
    for (int x = 0; x < side_px; ++x)
      if (marker_cell_white(spec.code, y / cell, x / cell)) f.gray(x, y) = 255;
  return f;
}

}  // namespace solar_ar
