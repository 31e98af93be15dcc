#pragma once

#include <cmath>
#include <vector>

#include "mega/errors.hpp"
#include "mega/image.hpp"
#include "mega/losses.hpp"

namespace mega {

struct PsnrResult {
  double db = 0.0;
  bool infinite = false;  // MSE was exactly zero
};

/// 10 log10(range^2 / MSE) over all pixels and channels.
inline PsnrResult psnr(const Image& a, const Image& b, double range = 1.0) {
  if (a.width != b.width || a.height != b.height)
    throw ConfigError("psnr: image dimensions mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return {0.0, true};
  return {10.0 * std::log10(range * range / mse), false};
}

/// DSSIM = (1 - SSIM) / 2. Variant 1 uses data range 1.0, variant 2 range 2.0.
inline double dssim(const Image& a, const Image& b, int variant) {
  if (variant != 1 && variant != 2) throw InvalidParameter("dssim: variant must be 1 or 2");
  const double range = variant == 1 ? 1.0 : 2.0;
  return (1.0 - ssim(a, b, range)) / 2.0;
}

struct FrameMetrics {
  std::string file;
  PsnrResult psnr;
  double dssim1 = 0.0;
  double dssim2 = 0.0;
};

struct MetricsReport {
  std::vector<FrameMetrics> frames;
  double avg_psnr = 0.0;  // over frames with finite PSNR
  int infinite_psnr_frames = 0;
  double avg_dssim1 = 0.0;
  double avg_dssim2 = 0.0;

  void finalize() {
    avg_psnr = avg_dssim1 = avg_dssim2 = 0.0;
    infinite_psnr_frames = 0;
    int finite = 0;
    for (const auto& f : frames) {
      if (f.psnr.infinite)
        ++infinite_psnr_frames;
      else {
        avg_psnr += f.psnr.db;
        ++finite;
      }
      avg_dssim1 += f.dssim1;
      avg_dssim2 += f.dssim2;
    }
    if (finite > 0) avg_psnr /= finite;
    if (!frames.empty()) {
      avg_dssim1 /= static_cast<double>(frames.size());
      avg_dssim2 /= static_cast<double>(frames.size());
    }
  }
};

}  // namespace mega
