// Raster file formats.
//
// PDR1: magic "PDR1", little-endian u32 H, W, C, dtype (0 = float32,
// 1 = uint8), then the row-major little-endian payload.
// Images are binary PPM (P6, 8-bit); grayscale output is PGM (P5).
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "textdepth/common.hpp"
#include "textdepth/tensor.hpp"

namespace textdepth {

enum class RasterDType : uint32_t { kFloat32 = 0, kUint8 = 1 };

namespace detail {

inline void put_u32le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline uint32_t get_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path.string());
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw DataError("read failed: " + path.string());
  return bytes;
}

}  // namespace detail

// On-disk float32 payloads are always little-endian; this library only
// targets little-endian hosts, enforced here.
static_assert(std::endian::native == std::endian::little,
              "textdepth raster I/O assumes a little-endian host");

inline void write_pdr_float(const std::filesystem::path& path, const Tensor<float>& t) {
  const int64_t h = t.dim(0);
  const int64_t w = t.rank() >= 2 ? t.dim(1) : 1;
  const int64_t c = t.rank() >= 3 ? t.dim(2) : 1;
  std::string bytes = "PDR1";
  detail::put_u32le(bytes, static_cast<uint32_t>(h));
  detail::put_u32le(bytes, static_cast<uint32_t>(w));
  detail::put_u32le(bytes, static_cast<uint32_t>(c));
  detail::put_u32le(bytes, static_cast<uint32_t>(RasterDType::kFloat32));
  const size_t off = bytes.size();
  bytes.resize(off + sizeof(float) * static_cast<size_t>(t.numel()));
  std::memcpy(bytes.data() + off, t.raw(), sizeof(float) * static_cast<size_t>(t.numel()));
  detail::write_file(path, bytes);
}

inline void write_pdr_u8(const std::filesystem::path& path, const Tensor<uint8_t>& t) {
  const int64_t h = t.dim(0);
  const int64_t w = t.rank() >= 2 ? t.dim(1) : 1;
  const int64_t c = t.rank() >= 3 ? t.dim(2) : 1;
  std::string bytes = "PDR1";
  detail::put_u32le(bytes, static_cast<uint32_t>(h));
  detail::put_u32le(bytes, static_cast<uint32_t>(w));
  detail::put_u32le(bytes, static_cast<uint32_t>(c));
  detail::put_u32le(bytes, static_cast<uint32_t>(RasterDType::kUint8));
  const size_t off = bytes.size();
  bytes.resize(off + static_cast<size_t>(t.numel()));
  std::memcpy(bytes.data() + off, t.raw(), static_cast<size_t>(t.numel()));
  detail::write_file(path, bytes);
}

struct PdrHeader {
  uint32_t h = 0, w = 0, c = 0;
  RasterDType dtype = RasterDType::kFloat32;
};

inline PdrHeader parse_pdr_header(const std::vector<unsigned char>& bytes,
                                  const std::filesystem::path& path) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "PDR1", 4) != 0)
    throw DataError("not a PDR1 raster: " + path.string());
  PdrHeader hd;
  hd.h = detail::get_u32le(bytes.data() + 4);
  hd.w = detail::get_u32le(bytes.data() + 8);
  hd.c = detail::get_u32le(bytes.data() + 12);
  const uint32_t dt = detail::get_u32le(bytes.data() + 16);
  if (dt > 1) throw DataError("unknown PDR1 dtype in " + path.string());
  hd.dtype = static_cast<RasterDType>(dt);
  const size_t elem = hd.dtype == RasterDType::kFloat32 ? 4 : 1;
  const size_t need = 20 + elem * hd.h * hd.w * hd.c;
  if (bytes.size() != need)
    throw DataError("truncated or oversized PDR1 payload: " + path.string());
  return hd;
}

inline Tensor<float> read_pdr_float(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const PdrHeader hd = parse_pdr_header(bytes, path);
  if (hd.dtype != RasterDType::kFloat32)
    throw DataError("expected float32 PDR1: " + path.string());
  std::vector<int64_t> shape = hd.c == 1 ? std::vector<int64_t>{hd.h, hd.w}
                                         : std::vector<int64_t>{hd.h, hd.w, hd.c};
  Tensor<float> t(shape);
  std::memcpy(t.raw(), bytes.data() + 20, sizeof(float) * static_cast<size_t>(t.numel()));
  return t;
}

inline Tensor<uint8_t> read_pdr_u8(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const PdrHeader hd = parse_pdr_header(bytes, path);
  if (hd.dtype != RasterDType::kUint8)
    throw DataError("expected uint8 PDR1: " + path.string());
  std::vector<int64_t> shape = hd.c == 1 ? std::vector<int64_t>{hd.h, hd.w}
                                         : std::vector<int64_t>{hd.h, hd.w, hd.c};
  Tensor<uint8_t> t(shape);
  std::memcpy(t.raw(), bytes.data() + 20, static_cast<size_t>(t.numel()));
  return t;
}

// Image values are stored as round(255 * x); the renderer quantizes its
// output onto the same grid, so write/read round-trips bit-exactly.
inline void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeError("PPM image must be HxWx3");
  const int64_t h = image.dim(0), w = image.dim(1);
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  bytes.reserve(bytes.size() + static_cast<size_t>(h * w * 3));
  for (int64_t i = 0; i < image.numel(); ++i) {
    const float x = std::min(1.0f, std::max(0.0f, image[i]));
    bytes.push_back(static_cast<char>(std::lround(255.0f * x)));
  }
  detail::write_file(path, bytes);
}

namespace detail {
// Skips exactly one whitespace-delimited ASCII decimal field.
inline uint32_t parse_pnm_int(const std::vector<unsigned char>& bytes, size_t& pos,
                              const std::filesystem::path& path) {
  while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
  uint32_t v = 0;
  bool any = false;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    v = v * 10 + (bytes[pos] - '0');
    ++pos;
    any = true;
  }
  if (!any) throw DataError("malformed PNM header: " + path.string());
  return v;
}
}  // namespace detail

inline Tensor<float> read_ppm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw DataError("not a binary PPM: " + path.string());
  size_t pos = 2;
  const uint32_t w = detail::parse_pnm_int(bytes, pos, path);
  const uint32_t h = detail::parse_pnm_int(bytes, pos, path);
  const uint32_t maxval = detail::parse_pnm_int(bytes, pos, path);
  if (maxval != 255) throw DataError("PPM maxval must be 255: " + path.string());
  ++pos;  // single whitespace after maxval
  if (bytes.size() - pos != static_cast<size_t>(w) * h * 3)
    throw DataError("truncated PPM payload: " + path.string());
  Tensor<float> img({h, w, 3});
  for (int64_t i = 0; i < img.numel(); ++i)
    img[i] = static_cast<float>(bytes[pos + static_cast<size_t>(i)]) / 255.0f;
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const Tensor<uint8_t>& gray) {
  if (gray.rank() != 2) throw ShapeError("PGM image must be HxW");
  const int64_t h = gray.dim(0), w = gray.dim(1);
  std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  bytes.append(reinterpret_cast<const char*>(gray.raw()), static_cast<size_t>(h * w));
  detail::write_file(path, bytes);
}

inline void write_ppm_u8(const std::filesystem::path& path, const Tensor<uint8_t>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("PPM image must be HxWx3");
  const int64_t h = rgb.dim(0), w = rgb.dim(1);
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  bytes.append(reinterpret_cast<const char*>(rgb.raw()), static_cast<size_t>(h * w * 3));
  detail::write_file(path, bytes);
}

}  // namespace textdepth
