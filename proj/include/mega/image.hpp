#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mega/errors.hpp"

namespace mega {

/// Row-major RGB image with real-valued channels in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // height * width * 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.0) {}

  double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }

  size_t size() const { return data.size(); }

  static Image constant(int w, int h, const Eigen::Vector3d& rgb) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
    return img;
  }
};

inline uint8_t quantize8(double v) {
  return static_cast<uint8_t>(std::lround(255.0 * std::min(1.0, std::max(0.0, v))));
}

/// Binary PPM (P6, maxval 255), quantized as round(255 * clamp(v, 0, 1)).
inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> bytes;
  bytes.reserve(img.size());
  for (double v : img.data) bytes.push_back(quantize8(v));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  auto next_token = [&in, &path]() {
    std::string tok;
    while (true) {
      int c = in.get();
      if (c == EOF) throw IoError("truncated ppm header: " + path);
      if (c == '#') {
        while (c != EOF && c != '\n') c = in.get();
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
  };
  if (next_token() != "P6") throw IoError("not a binary ppm: " + path);
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported ppm geometry: " + path);
  Image img(w, h);
  std::vector<uint8_t> bytes(img.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoError("truncated ppm payload: " + path);
  for (size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace mega
