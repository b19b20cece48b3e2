#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "flowfactor/fields.hpp"

namespace flowfactor {

// All three formats below are little-endian on disk; this library assumes a
// little-endian host, which the test suite asserts once.

namespace detail {

inline void write_exact(std::ofstream& out, const void* data, std::size_t n,
                        const std::string& path) {
  if (!out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)))
    throw std::runtime_error("write failed: " + path);
}

inline void read_exact(std::ifstream& in, void* data, std::size_t n,
                       const std::string& path) {
  if (!in.read(static_cast<char*>(data), static_cast<std::streamsize>(n)))
    throw std::runtime_error("unexpected end of file: " + path);
}

}  // namespace detail

/// Middlebury .flo: magic "PIEH", int32 width, int32 height, then row-major
/// interleaved float32 (u, v). Invalid pixels are stored with the
/// conventional unknown-flow sentinel (values above 1e9).
inline constexpr float kFloUnknown = 1e10f;

inline void write_flo(const FlowField& flow, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  detail::write_exact(out, "PIEH", 4, path);
  const std::int32_t w = flow.width();
  const std::int32_t h = flow.height();
  detail::write_exact(out, &w, 4, path);
  detail::write_exact(out, &h, 4, path);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float uv[2];
      if (flow.valid(x, y)) {
        uv[0] = static_cast<float>(flow.vectors(x, y).x());
        uv[1] = static_cast<float>(flow.vectors(x, y).y());
      } else {
        uv[0] = uv[1] = kFloUnknown;
      }
      detail::write_exact(out, uv, 8, path);
    }
}

inline FlowField read_flo(const std::string& path,
                          FlowKind kind = FlowKind::optical) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  detail::read_exact(in, magic, 4, path);
  if (std::memcmp(magic, "PIEH", 4) != 0)
    throw std::runtime_error("bad .flo magic in " + path);
  std::int32_t w = 0, h = 0;
  detail::read_exact(in, &w, 4, path);
  detail::read_exact(in, &h, 4, path);
  if (w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20)
    throw std::runtime_error("implausible .flo dimensions in " + path);
  FlowField flow(w, h, kind);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float uv[2];
      detail::read_exact(in, uv, 8, path);
      if (std::abs(uv[0]) > 1e9f || std::abs(uv[1]) > 1e9f ||
          !std::isfinite(uv[0]) || !std::isfinite(uv[1])) {
        flow.valid(x, y) = 0;
      } else {
        flow.vectors(x, y) = Eigen::Vector2d(uv[0], uv[1]);
      }
    }
  return flow;
}

/// Grayscale PFM ("Pf"). Scale is written as -1.0 (little-endian); scanlines
/// are stored bottom-to-top as the format requires.
inline void write_pfm(const Grid<double>& values, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "Pf\n" << values.width() << " " << values.height() << "\n-1.0\n";
  for (int y = values.height() - 1; y >= 0; --y)
    for (int x = 0; x < values.width(); ++x) {
      const float v = static_cast<float>(values(x, y));
      detail::write_exact(out, &v, 4, path);
    }
}

inline Grid<double> read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf") throw std::runtime_error("not a grayscale PFM: " + path);
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PFM dimensions: " + path);
  if (!(scale < 0.0))
    throw std::runtime_error("big-endian PFM not supported: " + path);
  in.get();  // single whitespace after the scale line
  Grid<double> values(w, h, 0.0);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      float v;
      detail::read_exact(in, &v, 4, path);
      values(x, y) = v;
    }
  return values;
}

inline void write_depth_pfm(const DepthMap& depth, const std::string& path) {
  write_pfm(depth.values, path);
}

/// Binary PGM mask: 255 marks a valid pixel, 0 an invalid one.
inline void write_pgm_mask(const Mask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      const unsigned char v = mask(x, y) ? 255 : 0;
      detail::write_exact(out, &v, 1, path);
    }
}

inline Mask read_pgm_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("unsupported PGM header: " + path);
  in.get();
  Mask mask(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      unsigned char v;
      detail::read_exact(in, &v, 1, path);
      mask(x, y) = (v >= 128) ? 1 : 0;
    }
  return mask;
}

}  // namespace flowfactor
