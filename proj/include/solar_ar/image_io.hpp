#pragma once

// Byte-exact image encoding (PPM P6/P5, PNG) and decoding.
//
// PNG encoder parameters are fixed: 8-bit RGBA (colour type 6), no
// interlace, filter type 0 (None) on every scanline, zlib level 1 with the
// default strategy, and no ancillary chunks. Output is therefore a pure
// function of the pixels for a given zlib build.

#include <png.h>
#include <zlib.h>

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "solar_ar/error.hpp"
#include "solar_ar/frame.hpp"

namespace solar_ar {

enum class ImageEncoding { kPpm, kPng };

inline std::vector<std::uint8_t> encode_ppm(const Frame& frame) {
  const bool rgb = frame.format() == PixelFormat::kRgba8;
  const std::string header = std::string(rgb ? "P6\n" : "P5\n") + std::to_string(frame.width()) +
                             " " + std::to_string(frame.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto px = frame.pixels();
  if (!rgb) {
    out.insert(out.end(), px.begin(), px.end());
    return out;
  }
  out.reserve(out.size() + px.size() / 4 * 3);
  for (std::size_t i = 0; i < px.size(); i += 4) {
    out.push_back(px[i]);
    out.push_back(px[i + 1]);
    out.push_back(px[i + 2]);
  }
  return out;
}

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char (&type)[5],
                      std::span<const std::uint8_t> data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_pos, static_cast<uInt>(out.size() - type_pos));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Frame& frame) {
  const bool rgba = frame.format() == PixelFormat::kRgba8;
  const int channels = rgba ? 4 : 1;
  const auto row_bytes = static_cast<std::size_t>(frame.width()) * static_cast<std::size_t>(channels);
  std::vector<std::uint8_t> raw;
  raw.reserve((row_bytes + 1) * static_cast<std::size_t>(frame.height()));
  const auto px = frame.pixels();
  for (int y = 0; y < frame.height(); ++y) {
    raw.push_back(0);  // filter: None
    const auto* row = px.data() + static_cast<std::size_t>(y) * row_bytes;
    raw.insert(raw.end(), row, row + row_bytes);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 1) != Z_OK) {
    throw Error(ErrorCode::kIo, "zlib compression failed");
  }
  packed.resize(packed_size);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(frame.width()));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(frame.height()));
  ihdr.insert(ihdr.end(), {8, static_cast<std::uint8_t>(rgba ? 6 : 0), 0, 0, 0});
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", packed);
  detail::put_chunk(out, "IEND", {});
  return out;
}

inline std::vector<std::uint8_t> encode(const Frame& frame, ImageEncoding enc) {
  return enc == ImageEncoding::kPpm ? encode_ppm(frame) : encode_png(frame);
}

namespace detail {

class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> data) : data_(data) {}

  int next_int() {
    skip_space_and_comments();
    int value = 0;
    const auto* begin = reinterpret_cast<const char*>(data_.data()) + pos_;
    const auto* end = reinterpret_cast<const char*>(data_.data()) + data_.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr == begin) throw Error(ErrorCode::kDecode, "malformed PNM header");
    pos_ += static_cast<std::size_t>(ptr - begin);
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < data_.size()) {
      const char c = static_cast<char>(data_[pos_]);
      if (c == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Decodes binary P6 (to RGBA8, alpha 255) or P5 (to GRAY8), maxval 255.
inline Frame decode_ppm(std::span<const std::uint8_t> data) {
  if (data.size() < 2 || data[0] != 'P' || (data[1] != '6' && data[1] != '5')) {
    throw Error(ErrorCode::kDecode, "not a binary PPM/PGM");
  }
  const bool rgb = data[1] == '6';
  detail::PnmReader reader(data);
  reader.advance(2);
  const int w = reader.next_int();
  const int h = reader.next_int();
  const int maxval = reader.next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorCode::kDecode, "unsupported PNM header");
  reader.advance(1);  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * (rgb ? 3u : 1u);
  if (data.size() < reader.pos() + n) throw Error(ErrorCode::kDecode, "truncated PNM raster");
  const auto* src = data.data() + reader.pos();
  if (!rgb) return Frame(w, h, PixelFormat::kGray8, std::vector<std::uint8_t>(src, src + n));
  Frame f(w, h, PixelFormat::kRgba8);
  auto dst = f.mutable_pixels();
  for (std::size_t i = 0, j = 0; i < n; i += 3, j += 4) {
    dst[j] = src[i];
    dst[j + 1] = src[i + 1];
    dst[j + 2] = src[i + 2];
    dst[j + 3] = 255;
  }
  return f;
}

/// Decodes any PNG libpng understands into RGBA8.
inline Frame decode_png(std::span<const std::uint8_t> data) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, data.data(), data.size())) {
    throw Error(ErrorCode::kDecode, std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGBA;
  if (image.width == 0 || image.height == 0) {
    png_image_free(&image);
    throw Error(ErrorCode::kDecode, "png: empty image");
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::kDecode, "png: " + msg);
  }
  return Frame(static_cast<int>(image.width), static_cast<int>(image.height), PixelFormat::kRgba8,
               std::move(pixels));
}

inline Frame decode_image(std::span<const std::uint8_t> data) {
  static constexpr std::array<std::uint8_t, 4> kPngMagic{0x89, 'P', 'N', 'G'};
  if (data.size() >= 4 && std::equal(kPngMagic.begin(), kPngMagic.end(), data.begin())) {
    return decode_png(data);
  }
  return decode_ppm(data);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

inline Frame load_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

/// 64-bit FNV-1a; used for golden frame hashes.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace solar_ar
