#pragma once

#include <zlib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mega/color.hpp"
#include "mega/deform.hpp"
#include "mega/errors.hpp"
#include "mega/fp16.hpp"
#include "mega/gaussian.hpp"
#include "mega/mlp.hpp"

// Model archive ("MEG4"), all integers little-endian:
//
//   magic "MEG4" | version u16 | raw-DEFLATE payload | crc32 u32
//
// The CRC covers the uncompressed payload. Payload layout:
//
//   count u64
//   permutation: count x u32   (original index of each stored Gaussian)
//   attribute streams in order mu4, q_l, q_r, s4_log, c_dc, o_logit;
//     each stream is binary16 codes in Morton order, gaussian-major,
//     delta-coded per channel (stride = channel count, wrapping u16)
//   phi bundle   : u32 n_mlps, then each Mlp
//   theta bundle : u16 freq_mu | u16 freq_dv | u16 freq_t | u32 n_mlps, Mlps
//   Mlp          : u32 n_layers; per layer u32 rows, u32 cols, u8 activation,
//                  rows*cols binary16 weights (row-major), rows binary16 biases

namespace mega {

// ---- Morton order ----------------------------------------------------------

/// Spreads the 16 bits of v so consecutive bits land 4 apart.
inline uint64_t morton_spread4(uint16_t v) {
  uint64_t x = v;
  x = (x | (x << 24)) & 0x000000FF000000FFull;
  x = (x | (x << 12)) & 0x000F000F000F000Full;
  x = (x | (x << 6)) & 0x0303030303030303ull;
  x = (x | (x << 3)) & 0x1111111111111111ull;
  return x;
}

inline uint64_t morton_key4d(uint16_t x, uint16_t y, uint16_t z, uint16_t t) {
  return morton_spread4(x) | (morton_spread4(y) << 1) | (morton_spread4(z) << 2) |
         (morton_spread4(t) << 3);
}

/// Gaussian ordering along a 4D Morton curve over (x, y, z, t), quantized to
/// 16 bits per axis over the cloud's bounding box. Ties break by index.
inline std::vector<int> morton_order(const GaussianCloud& cloud) {
  const int n = cloud.count();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (n == 0) return order;
  Eigen::Vector4d lo = cloud.mu4.colwise().minCoeff();
  Eigen::Vector4d hi = cloud.mu4.colwise().maxCoeff();
  std::vector<uint64_t> keys(n);
  for (int i = 0; i < n; ++i) {
    uint16_t q[4];
    for (int k = 0; k < 4; ++k) {
      const double range = hi[k] - lo[k];
      const double f = range > 0.0 ? (cloud.mu4(i, k) - lo[k]) / range : 0.0;
      q[k] = static_cast<uint16_t>(
          std::min(65535.0, std::max(0.0, std::floor(f * 65535.0 + 0.5))));
    }
    keys[i] = morton_key4d(q[0], q[1], q[2], q[3]);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return a < b;
  });
  return order;
}

// ---- Delta coding ----------------------------------------------------------

/// Wrapping u16 differences against the element one stride back (first stride
/// elements are encoded against zero), serialized little-endian.
inline std::vector<uint8_t> delta_encode(const std::vector<uint16_t>& codes, int stride) {
  if (stride < 1 || codes.size() % static_cast<size_t>(stride) != 0)
    throw ConfigError("delta_encode: stream length is not a multiple of the stride");
  std::vector<uint8_t> out;
  out.reserve(codes.size() * 2);
  for (size_t i = 0; i < codes.size(); ++i) {
    const uint16_t prev = i >= static_cast<size_t>(stride) ? codes[i - stride] : 0;
    const auto delta = static_cast<uint16_t>(codes[i] - prev);
    out.push_back(static_cast<uint8_t>(delta & 0xFF));
    out.push_back(static_cast<uint8_t>(delta >> 8));
  }
  return out;
}

inline std::vector<uint16_t> delta_decode(const std::vector<uint8_t>& bytes, int stride) {
  if (stride < 1 || bytes.size() % 2 != 0 ||
      (bytes.size() / 2) % static_cast<size_t>(stride) != 0)
    throw ConfigError("delta_decode: byte length is not a multiple of the stride");
  std::vector<uint16_t> out(bytes.size() / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    const auto delta = static_cast<uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    const uint16_t prev = i >= static_cast<size_t>(stride) ? out[i - stride] : 0;
    out[i] = static_cast<uint16_t>(prev + delta);
  }
  return out;
}

// ---- DEFLATE ---------------------------------------------------------------

inline std::vector<uint8_t> deflate_bytes(const std::vector<uint8_t>& raw, int level = 9) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, -15, 9, Z_DEFAULT_STRATEGY) != Z_OK)
    throw IoError("deflate: init failed");
  std::vector<uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())));
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw IoError("deflate: compression failed");
  out.resize(zs.total_out);
  return out;
}

inline std::vector<uint8_t> inflate_bytes(const uint8_t* data, size_t size) {
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK)
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: inflate init failed");
  std::vector<uint8_t> out;
  std::vector<uint8_t> buf(1 << 16);
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  int rc = Z_OK;
  do {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: corrupt deflate stream");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

// ---- Byte IO ---------------------------------------------------------------

namespace detail {

struct ByteWriter {
  std::vector<uint8_t> bytes;
  void u8(uint8_t v) { bytes.push_back(v); }
  void u16(uint16_t v) {
    bytes.push_back(v & 0xFF);
    bytes.push_back(v >> 8);
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back((v >> (8 * i)) & 0xFF);
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back((v >> (8 * i)) & 0xFF);
  }
  void raw(const std::vector<uint8_t>& b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
};

struct ByteReader {
  const uint8_t* data;
  size_t size;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > size)
      throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: truncated payload");
  }
  uint8_t u8() {
    need(1);
    return data[pos++];
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::vector<uint8_t> raw(size_t n) {
    need(n);
    std::vector<uint8_t> out(data + pos, data + pos + n);
    pos += n;
    return out;
  }
};

inline void write_mlp(ByteWriter& w, const Mlp& mlp, int* sat) {
  w.u32(static_cast<uint32_t>(mlp.layers.size()));
  for (const auto& l : mlp.layers) {
    w.u32(static_cast<uint32_t>(l.weight.rows()));
    w.u32(static_cast<uint32_t>(l.weight.cols()));
    w.u8(l.act == Activation::Relu ? 1 : 0);
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) w.u16(to_fp16(l.weight(r, c), sat));
    for (int r = 0; r < l.bias.size(); ++r) w.u16(to_fp16(l.bias[r], sat));
  }
}

inline Mlp read_mlp(ByteReader& r) {
  Mlp mlp;
  const uint32_t n_layers = r.u32();
  if (n_layers > 64)
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: implausible layer count");
  for (uint32_t li = 0; li < n_layers; ++li) {
    DenseLayer l;
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    if (rows > 1u << 20 || cols > 1u << 20)
      throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: implausible layer shape");
    l.act = r.u8() == 1 ? Activation::Relu : Activation::None;
    l.weight.resize(rows, cols);
    for (uint32_t rr = 0; rr < rows; ++rr)
      for (uint32_t cc = 0; cc < cols; ++cc) l.weight(rr, cc) = from_fp16(r.u16());
    l.bias.resize(rows);
    for (uint32_t rr = 0; rr < rows; ++rr) l.bias[rr] = from_fp16(r.u16());
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

}  // namespace detail

// ---- Archive ---------------------------------------------------------------

constexpr uint16_t kArchiveVersion = 1;
inline const char kArchiveMagic[4] = {'M', 'E', 'G', '4'};

struct LoadedModel {
  GaussianCloud cloud;
  std::optional<DeformPredictor> deform;
  std::optional<ColorPredictor> color;
};

/// Serializes a model to archive bytes. FP16 saturations are counted into
/// *saturation_count when provided.
inline std::vector<uint8_t> save_model(const GaussianCloud& cloud,
                                       const DeformPredictor* deform,
                                       const ColorPredictor* color,
                                       int* saturation_count = nullptr) {
  const int n = cloud.count();
  int local_sat = 0;
  int* sat = saturation_count ? saturation_count : &local_sat;

  detail::ByteWriter payload;
  payload.u64(static_cast<uint64_t>(n));
  const std::vector<int> order = morton_order(cloud);
  for (int k = 0; k < n; ++k) payload.u32(static_cast<uint32_t>(order[k]));

  auto write_stream = [&](int channels, auto&& get) {
    std::vector<uint16_t> codes;
    codes.reserve(static_cast<size_t>(n) * channels);
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < channels; ++c) codes.push_back(to_fp16(get(order[k], c), sat));
    payload.raw(delta_encode(codes, channels));
  };
  write_stream(4, [&](int i, int c) { return cloud.mu4(i, c); });
  write_stream(4, [&](int i, int c) { return cloud.q_l(i, c); });
  write_stream(4, [&](int i, int c) { return cloud.q_r(i, c); });
  write_stream(4, [&](int i, int c) { return cloud.s4(i, c); });
  write_stream(3, [&](int i, int c) { return cloud.c_dc(i, c); });
  write_stream(1, [&](int i, int) { return cloud.o_logit[i]; });

  payload.u32(color ? 1u : 0u);
  if (color) detail::write_mlp(payload, color->phi, sat);

  payload.u16(static_cast<uint16_t>(deform ? deform->freq_mu : 0));
  payload.u16(static_cast<uint16_t>(deform ? deform->freq_dv : 0));
  payload.u16(static_cast<uint16_t>(deform ? deform->freq_t : 0));
  payload.u32(deform ? 4u : 0u);
  if (deform) {
    detail::write_mlp(payload, deform->enc_mu, sat);
    detail::write_mlp(payload, deform->enc_dv, sat);
    detail::write_mlp(payload, deform->enc_t, sat);
    detail::write_mlp(payload, deform->trunk, sat);
  }

  detail::ByteWriter file;
  file.bytes.assign(kArchiveMagic, kArchiveMagic + 4);
  file.u16(kArchiveVersion);
  file.raw(deflate_bytes(payload.bytes));
  file.u32(static_cast<uint32_t>(
      crc32(0, payload.bytes.data(), static_cast<uInt>(payload.bytes.size()))));
  return file.bytes;
}

inline LoadedModel load_model(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 10) throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: too short");
  if (std::memcmp(bytes.data(), kArchiveMagic, 4) != 0)
    throw ArchiveError(ArchiveError::Kind::BadMagic, "archive: bad magic");
  const uint16_t version = static_cast<uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kArchiveVersion)
    throw ArchiveError(ArchiveError::Kind::BadVersion,
                       "archive: unsupported version " + std::to_string(version));
  const size_t comp_size = bytes.size() - 6 - 4;
  const std::vector<uint8_t> payload = inflate_bytes(bytes.data() + 6, comp_size);
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
  const auto computed =
      static_cast<uint32_t>(crc32(0, payload.data(), static_cast<uInt>(payload.size())));
  if (stored_crc != computed)
    throw ArchiveError(ArchiveError::Kind::BadCrc, "archive: crc mismatch");

  detail::ByteReader r{payload.data(), payload.size()};
  const uint64_t count64 = r.u64();
  if (count64 > (1ull << 32))
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: implausible count");
  const int n = static_cast<int>(count64);
  std::vector<uint32_t> perm(n);
  std::vector<bool> seen(n, false);
  for (int k = 0; k < n; ++k) {
    perm[k] = r.u32();
    if (perm[k] >= static_cast<uint32_t>(n) || seen[perm[k]])
      throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: invalid permutation");
    seen[perm[k]] = true;
  }

  LoadedModel out;
  out.cloud = GaussianCloud::sized(n);
  auto read_stream = [&](int channels, auto&& set) {
    const std::vector<uint16_t> codes =
        delta_decode(r.raw(static_cast<size_t>(n) * channels * 2), channels);
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < channels; ++c)
        set(static_cast<int>(perm[k]), c, from_fp16(codes[static_cast<size_t>(k) * channels + c]));
  };
  read_stream(4, [&](int i, int c, double v) { out.cloud.mu4(i, c) = v; });
  read_stream(4, [&](int i, int c, double v) { out.cloud.q_l(i, c) = v; });
  read_stream(4, [&](int i, int c, double v) { out.cloud.q_r(i, c) = v; });
  read_stream(4, [&](int i, int c, double v) { out.cloud.s4(i, c) = v; });
  read_stream(3, [&](int i, int c, double v) { out.cloud.c_dc(i, c) = v; });
  read_stream(1, [&](int i, int, double v) { out.cloud.o_logit[i] = v; });

  const uint32_t n_phi = r.u32();
  if (n_phi > 1) throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: bad phi bundle");
  if (n_phi == 1) {
    ColorPredictor cp;
    cp.phi = detail::read_mlp(r);
    out.color = std::move(cp);
  }
  const uint16_t freq_mu = r.u16();
  const uint16_t freq_dv = r.u16();
  const uint16_t freq_t = r.u16();
  const uint32_t n_theta = r.u32();
  if (n_theta != 0 && n_theta != 4)
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: bad theta bundle");
  if (n_theta == 4) {
    DeformPredictor dp;
    dp.freq_mu = freq_mu;
    dp.freq_dv = freq_dv;
    dp.freq_t = freq_t;
    dp.enc_mu = detail::read_mlp(r);
    dp.enc_dv = detail::read_mlp(r);
    dp.enc_t = detail::read_mlp(r);
    dp.trunk = detail::read_mlp(r);
    out.deform = std::move(dp);
  }
  if (r.pos != r.size)
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: trailing payload bytes");
  return out;
}

inline void save_model_file(const std::string& path, const GaussianCloud& cloud,
                            const DeformPredictor* deform, const ColorPredictor* color,
                            int* saturation_count = nullptr) {
  const std::vector<uint8_t> bytes = save_model(cloud, deform, color, saturation_count);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open: " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (in.gcount() != size) throw IoError("read failed: " + path);
  return bytes;
}

inline LoadedModel load_model_file(const std::string& path) {
  return load_model(read_file_bytes(path));
}

// ---- Raw (decompressed) sibling format --------------------------------------
//
// "MEGR": same logical content as MEG4 but FP32 little-endian values, original
// Gaussian order, no delta coding, no DEFLATE. This is what `decompress`
// emits; `compress` turns it back into a MEG4 archive. Every value written by
// decompress is exactly representable in FP32 (it came from binary16), so a
// compress/decompress cycle is lossless.
//
//   magic "MEGR" | version u16 | count u64 | streams f32 | bundles f32 | crc32

inline const char kRawMagic[4] = {'M', 'E', 'G', 'R'};

namespace detail {

inline void write_f32(ByteWriter& w, double v) {
  const auto f = static_cast<float>(v);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  w.u32(bits);
}

inline double read_f32(ByteReader& r) {
  const uint32_t bits = r.u32();
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

inline void write_mlp_f32(ByteWriter& w, const Mlp& mlp) {
  w.u32(static_cast<uint32_t>(mlp.layers.size()));
  for (const auto& l : mlp.layers) {
    w.u32(static_cast<uint32_t>(l.weight.rows()));
    w.u32(static_cast<uint32_t>(l.weight.cols()));
    w.u8(l.act == Activation::Relu ? 1 : 0);
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) write_f32(w, l.weight(r, c));
    for (int r = 0; r < l.bias.size(); ++r) write_f32(w, l.bias[r]);
  }
}

inline Mlp read_mlp_f32(ByteReader& r) {
  Mlp mlp;
  const uint32_t n_layers = r.u32();
  if (n_layers > 64)
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: implausible layer count");
  for (uint32_t li = 0; li < n_layers; ++li) {
    DenseLayer l;
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    if (rows > 1u << 20 || cols > 1u << 20)
      throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: implausible layer shape");
    l.act = r.u8() == 1 ? Activation::Relu : Activation::None;
    l.weight.resize(rows, cols);
    for (uint32_t rr = 0; rr < rows; ++rr)
      for (uint32_t cc = 0; cc < cols; ++cc) l.weight(rr, cc) = read_f32(r);
    l.bias.resize(rows);
    for (uint32_t rr = 0; rr < rows; ++rr) l.bias[rr] = read_f32(r);
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

}  // namespace detail

inline std::vector<uint8_t> save_model_raw(const GaussianCloud& cloud,
                                           const DeformPredictor* deform,
                                           const ColorPredictor* color) {
  const int n = cloud.count();
  detail::ByteWriter body;
  body.u64(static_cast<uint64_t>(n));
  auto write_stream = [&](int channels, auto&& get) {
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) detail::write_f32(body, get(i, c));
  };
  write_stream(4, [&](int i, int c) { return cloud.mu4(i, c); });
  write_stream(4, [&](int i, int c) { return cloud.q_l(i, c); });
  write_stream(4, [&](int i, int c) { return cloud.q_r(i, c); });
  write_stream(4, [&](int i, int c) { return cloud.s4(i, c); });
  write_stream(3, [&](int i, int c) { return cloud.c_dc(i, c); });
  write_stream(1, [&](int i, int) { return cloud.o_logit[i]; });
  body.u32(color ? 1u : 0u);
  if (color) detail::write_mlp_f32(body, color->phi);
  body.u16(static_cast<uint16_t>(deform ? deform->freq_mu : 0));
  body.u16(static_cast<uint16_t>(deform ? deform->freq_dv : 0));
  body.u16(static_cast<uint16_t>(deform ? deform->freq_t : 0));
  body.u32(deform ? 4u : 0u);
  if (deform) {
    detail::write_mlp_f32(body, deform->enc_mu);
    detail::write_mlp_f32(body, deform->enc_dv);
    detail::write_mlp_f32(body, deform->enc_t);
    detail::write_mlp_f32(body, deform->trunk);
  }

  detail::ByteWriter file;
  file.bytes.assign(kRawMagic, kRawMagic + 4);
  file.u16(kArchiveVersion);
  file.raw(body.bytes);
  file.u32(static_cast<uint32_t>(
      crc32(0, body.bytes.data(), static_cast<uInt>(body.bytes.size()))));
  return file.bytes;
}

inline LoadedModel load_model_raw(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 10) throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: too short");
  if (std::memcmp(bytes.data(), kRawMagic, 4) != 0)
    throw ArchiveError(ArchiveError::Kind::BadMagic, "archive: bad raw-model magic");
  const uint16_t version = static_cast<uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kArchiveVersion)
    throw ArchiveError(ArchiveError::Kind::BadVersion,
                       "archive: unsupported version " + std::to_string(version));
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
  const size_t body_size = bytes.size() - 6 - 4;
  if (stored_crc !=
      static_cast<uint32_t>(crc32(0, bytes.data() + 6, static_cast<uInt>(body_size))))
    throw ArchiveError(ArchiveError::Kind::BadCrc, "archive: crc mismatch");

  detail::ByteReader r{bytes.data() + 6, body_size};
  const uint64_t count64 = r.u64();
  if (count64 > (1ull << 32))
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: implausible count");
  const int n = static_cast<int>(count64);
  LoadedModel out;
  out.cloud = GaussianCloud::sized(n);
  auto read_stream = [&](int channels, auto&& set) {
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) set(i, c, detail::read_f32(r));
  };
  read_stream(4, [&](int i, int c, double v) { out.cloud.mu4(i, c) = v; });
  read_stream(4, [&](int i, int c, double v) { out.cloud.q_l(i, c) = v; });
  read_stream(4, [&](int i, int c, double v) { out.cloud.q_r(i, c) = v; });
  read_stream(4, [&](int i, int c, double v) { out.cloud.s4(i, c) = v; });
  read_stream(3, [&](int i, int c, double v) { out.cloud.c_dc(i, c) = v; });
  read_stream(1, [&](int i, int, double v) { out.cloud.o_logit[i] = v; });
  const uint32_t n_phi = r.u32();
  if (n_phi > 1) throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: bad phi bundle");
  if (n_phi == 1) {
    ColorPredictor cp;
    cp.phi = detail::read_mlp_f32(r);
    out.color = std::move(cp);
  }
  const uint16_t freq_mu = r.u16();
  const uint16_t freq_dv = r.u16();
  const uint16_t freq_t = r.u16();
  const uint32_t n_theta = r.u32();
  if (n_theta != 0 && n_theta != 4)
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: bad theta bundle");
  if (n_theta == 4) {
    DeformPredictor dp;
    dp.freq_mu = freq_mu;
    dp.freq_dv = freq_dv;
    dp.freq_t = freq_t;
    dp.enc_mu = detail::read_mlp_f32(r);
    dp.enc_dv = detail::read_mlp_f32(r);
    dp.enc_t = detail::read_mlp_f32(r);
    dp.trunk = detail::read_mlp_f32(r);
    out.deform = std::move(dp);
  }
  if (r.pos != r.size)
    throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: trailing payload bytes");
  return out;
}

/// Loads either a MEG4 archive or a MEGR raw model, sniffing the magic.
inline LoadedModel load_model_any_file(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kRawMagic, 4) == 0)
    return load_model_raw(bytes);
  return load_model(bytes);
}

/// Per-section byte accounting for an archive.
struct SizeReport {
  size_t count = 0;
  size_t header_bytes = 6;        // magic + version
  size_t permutation_bytes = 0;   // pre-deflate
  size_t attribute_bytes = 0;     // pre-deflate fp16 streams
  size_t mlp_bytes = 0;           // pre-deflate (incl. bundle headers)
  size_t payload_bytes = 0;       // uncompressed payload
  size_t compressed_bytes = 0;    // deflate stream
  size_t file_bytes = 0;
  double per_gaussian_attribute_bytes() const {
    return count ? static_cast<double>(attribute_bytes) / static_cast<double>(count) : 0.0;
  }
};

inline SizeReport size_report(const std::vector<uint8_t>& bytes) {
  SizeReport rep;
  rep.file_bytes = bytes.size();
  if (bytes.size() < 10) throw ArchiveError(ArchiveError::Kind::Corrupt, "archive: too short");
  rep.compressed_bytes = bytes.size() - 6 - 4;
  load_model(bytes);  // full validation incl. CRC
  const std::vector<uint8_t> payload = inflate_bytes(bytes.data() + 6, rep.compressed_bytes);
  rep.payload_bytes = payload.size();
  detail::ByteReader r{payload.data(), payload.size()};
  rep.count = r.u64();
  rep.permutation_bytes = rep.count * 4;
  rep.attribute_bytes = rep.count * 20 * 2;
  rep.mlp_bytes = rep.payload_bytes - 8 - rep.permutation_bytes - rep.attribute_bytes;
  return rep;
}

}  // namespace mega
