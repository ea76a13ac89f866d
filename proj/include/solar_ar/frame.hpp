#pragma once

// Frames, colour conversion and the multi-resolution stack consumed by the
// tracker.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "solar_ar/error.hpp"

namespace solar_ar {

enum class PixelFormat { kRgba8, kGray8 };

inline constexpr int bytes_per_pixel(PixelFormat f) { return f == PixelFormat::kRgba8 ? 4 : 1; }

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend constexpr bool operator==(Rgb, Rgb) = default;
};

/// Row-major, tightly packed pixel buffer. Immutable once handed to the
/// pipeline; mutation goes through a copy.
class Frame {
 public:
  Frame() = default;

  Frame(int width, int height, PixelFormat format, std::uint8_t fill = 0)
      : width_(width), height_(height), format_(format) {
    check_dims();
    pixels_.assign(expected_size(), fill);
  }

  Frame(int width, int height, PixelFormat format, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), format_(format), pixels_(std::move(pixels)) {
    check_dims();
    if (pixels_.size() != expected_size()) {
      throw Error(ErrorCode::kInvalidArgument, "pixel buffer size does not match dimensions");
    }
  }

  static Frame filled_rgba(int width, int height, Rgb c) {
    Frame f(width, height, PixelFormat::kRgba8);
    for (std::size_t i = 0; i < f.pixels_.size(); i += 4) {
      f.pixels_[i] = c.r;
      f.pixels_[i + 1] = c.g;
      f.pixels_[i + 2] = c.b;
      f.pixels_[i + 3] = 255;
    }
    return f;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  PixelFormat format() const { return format_; }
  int channels() const { return bytes_per_pixel(format_); }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> mutable_pixels() { return pixels_; }
  bool empty() const { return pixels_.empty(); }

  std::uint64_t seq() const { return seq_; }
  double t() const { return t_; }
  void set_stamp(std::uint64_t seq, double t) {
    seq_ = seq;
    t_ = t;
  }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  std::uint8_t gray(int x, int y) const {
    return pixels_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                   static_cast<std::size_t>(x)];
  }
  std::uint8_t& gray(int x, int y) {
    return pixels_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                   static_cast<std::size_t>(x)];
  }

  const std::uint8_t* rgba(int x, int y) const {
    return &pixels_[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                     static_cast<std::size_t>(x)) * 4];
  }
  std::uint8_t* rgba(int x, int y) {
    return &pixels_[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                     static_cast<std::size_t>(x)) * 4];
  }

  void set_rgb(int x, int y, Rgb c) {
    std::uint8_t* p = rgba(x, y);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
    p[3] = 255;
  }

  /// Pixel equality only; stamps are ignored.
  bool same_pixels(const Frame& o) const {
    return width_ == o.width_ && height_ == o.height_ && format_ == o.format_ && pixels_ == o.pixels_;
  }

 private:
  void check_dims() const {
    if (width_ <= 0 || height_ <= 0) {
      throw Error(ErrorCode::kInvalidArgument, "frame dimensions must be positive");
    }
  }
  std::size_t expected_size() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_) *
           static_cast<std::size_t>(bytes_per_pixel(format_));
  }

  int width_ = 0;
  int height_ = 0;
  PixelFormat format_ = PixelFormat::kGray8;
  std::vector<std::uint8_t> pixels_;
  std::uint64_t seq_ = 0;
  double t_ = 0.0;
};

/// BT.601 luma with round-half-up, computed in integers so results are
/// bit-exact: y = floor((299 R + 587 G + 114 B + 500) / 1000).
inline std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

inline Frame to_gray(const Frame& frame) {
  if (frame.format() != PixelFormat::kRgba8) {
    throw Error(ErrorCode::kWrongFormat, "to_gray expects an RGBA8 frame");
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(frame.width()) *
                                static_cast<std::size_t>(frame.height()));
  const auto in = frame.pixels();
  for (std::size_t i = 0, j = 0; i < out.size(); ++i, j += 4) {
    out[i] = luma(in[j], in[j + 1], in[j + 2]);
  }
  Frame g(frame.width(), frame.height(), PixelFormat::kGray8, std::move(out));
  g.set_stamp(frame.seq(), frame.t());
  return g;
}

/// Halves each dimension (floor); each output pixel is the round-half-up mean
/// of its 2x2 block.
inline Frame downsample(const Frame& frame) {
  if (frame.format() != PixelFormat::kGray8) {
    throw Error(ErrorCode::kWrongFormat, "downsample expects a GRAY8 frame");
  }
  if (frame.width() < 2 || frame.height() < 2) {
    throw Error(ErrorCode::kTooSmall, "frame too small to downsample");
  }
  const int w = frame.width() / 2;
  const int h = frame.height() / 2;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  const auto in = frame.pixels();
  const auto stride = static_cast<std::size_t>(frame.width());
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* r0 = &in[static_cast<std::size_t>(2 * y) * stride];
    const std::uint8_t* r1 = r0 + stride;
    std::uint8_t* o = &out[static_cast<std::size_t>(y) * static_cast<std::size_t>(w)];
    for (int x = 0; x < w; ++x) {
      const unsigned sum = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
      o[x] = static_cast<std::uint8_t>((sum + 2u) / 4u);
    }
  }
  Frame d(w, h, PixelFormat::kGray8, std::move(out));
  d.set_stamp(frame.seq(), frame.t());
  return d;
}

inline constexpr int kMinPyramidSide = 8;
inline constexpr int kDefaultPyramidLevels = 3;

struct FramePyramid {
  std::vector<Frame> levels;

  const Frame& base() const { return levels.front(); }
  const Frame& coarsest() const { return levels.back(); }
  int size() const { return static_cast<int>(levels.size()); }
};

inline FramePyramid build_pyramid(const Frame& frame, int levels) {
  if (levels < 1) throw Error(ErrorCode::kInvalidArgument, "pyramid needs at least one level");
  int w = frame.width();
  int h = frame.height();
  for (int i = 1; i < levels; ++i) {
    w /= 2;
    h /= 2;
  }
  if (w < kMinPyramidSide || h < kMinPyramidSide) {
    throw Error(ErrorCode::kInvalidArgument, "coarsest pyramid level would be smaller than 8 px");
  }
  FramePyramid p;
  p.levels.reserve(static_cast<std::size_t>(levels));
  p.levels.push_back(frame.format() == PixelFormat::kGray8 ? frame : to_gray(frame));
  for (int i = 1; i < levels; ++i) p.levels.push_back(downsample(p.levels.back()));
  return p;
}

/// Maps a pixel-center coordinate on pyramid level `level` to level 0.
/// Level-1 pixel i covers level-0 pixels 2i and 2i+1, centred at 2i + 0.5.
inline double level_to_base(double coord, int level) {
  const double scale = static_cast<double>(1 << level);
  return scale * coord + 0.5 * (scale - 1.0);
}

}  // namespace solar_ar
