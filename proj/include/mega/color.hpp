#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mega/errors.hpp"
#include "mega/mlp.hpp"

namespace mega {

constexpr double kCoincidentViewEps = 1e-12;

/// Normalized direction from camera center to a Gaussian. Coincident points
/// fall back to the supplied camera forward axis and are counted.
inline Eigen::Vector3d view_direction(const Eigen::Vector3d& mu3, const Eigen::Vector3d& p_v,
                                      const Eigen::Vector3d& fallback_axis = {0, 0, 1},
                                      int* coincident_count = nullptr) {
  const Eigen::Vector3d diff = mu3 - p_v;
  const double n = diff.norm();
  if (n < kCoincidentViewEps) {
    if (coincident_count) ++(*coincident_count);
    return fallback_axis.normalized();
  }
  return diff / n;
}

/// Shared AC color head: three linear layers (ReLU between), input
/// [mu3, d_v, t, c_dc] of width 10, output 3 residual logits. Zero-initialized
/// final layer makes a fresh predictor pure-DC.
struct ColorPredictor {
  Mlp phi;

  static ColorPredictor make(uint64_t seed, int hidden = 64) {
    std::mt19937_64 gen(seed);
    ColorPredictor p;
    p.phi = make_mlp({10, hidden, hidden, 3}, {Activation::Relu, Activation::Relu, Activation::None},
                     gen, /*zero_final=*/true);
    return p;
  }

  void validate() const {
    if (phi.input_dim() != 10 || phi.output_dim() != 3)
      throw ConfigError("color: predictor must map 10 inputs to 3 outputs");
  }
};

struct ColorCache {
  MlpCache mlp;
  Eigen::MatrixX3d rgb;  // post-sigmoid
  bool valid = false;
};

/// Batched color prediction: rgb = sigmoid(c_dc + phi([sg(mu3), sg(d_v), t, c_dc])).
inline Eigen::MatrixX3d predict_color_batch(const ColorPredictor& cp, const Eigen::MatrixX3d& mu3,
                                            const Eigen::MatrixX3d& d_v, double t,
                                            const Eigen::MatrixX3d& c_dc,
                                            ColorCache* cache = nullptr) {
  cp.validate();
  const Eigen::Index n = mu3.rows();
  if (d_v.rows() != n || c_dc.rows() != n) throw ConfigError("color: batch row mismatch");
  Eigen::MatrixXd input(n, 10);
  input << mu3, d_v, Eigen::MatrixXd::Constant(n, 1, t), c_dc;
  MlpCache local;
  const Eigen::MatrixXd ac = cp.phi.forward(input, cache ? &cache->mlp : &local);
  // Scalar sigmoid keeps this path bit-identical to the DC-only fallback.
  Eigen::MatrixX3d rgb(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) rgb(i, k) = 1.0 / (1.0 + std::exp(-(c_dc(i, k) + ac(i, k))));
  if (cache) {
    cache->rgb = rgb;
    cache->valid = true;
  }
  return rgb;
}

inline Eigen::Vector3d predict_color(const ColorPredictor& cp, const Eigen::Vector3d& mu3,
                                     const Eigen::Vector3d& d_v, double t,
                                     const Eigen::Vector3d& c_dc, ColorCache* cache = nullptr) {
  if (std::abs(d_v.norm() - 1.0) > 1e-6)
    throw InvalidParameter("color: view direction is not unit-norm");
  Eigen::MatrixX3d m(1, 3), d(1, 3), c(1, 3);
  m.row(0) = mu3;
  d.row(0) = d_v;
  c.row(0) = c_dc;
  return predict_color_batch(cp, m, d, t, c, cache).row(0);
}

/// Backward for predict_color_batch. c_dc receives gradient both directly and
/// through the network input (columns 7-9); mu3 and d_v are stop-gradients.
inline void predict_color_backward(const ColorPredictor& cp, const ColorCache& cache,
                                   const Eigen::MatrixX3d& d_rgb, MlpGrads& g_phi,
                                   Eigen::MatrixX3d& g_cdc) {
  if (!cache.valid) throw StateError("color: backward called without a forward cache");
  const Eigen::MatrixX3d d_pre =
      (d_rgb.array() * cache.rgb.array() * (1.0 - cache.rgb.array())).matrix();
  const Eigen::MatrixXd d_input = cp.phi.backward(d_pre, cache.mlp, g_phi);
  g_cdc += d_pre + Eigen::MatrixX3d(d_input.rightCols<3>());
}

/// Per-Gaussian stored parameter counts.
/// MEGA layout: mu4 + q_l + q_r + s4 + c_dc + opacity = 4+4+4+4+3+1.
inline int param_count_per_gaussian() { return 20; }

/// Reference 4DGS layout: 17 base parameters plus 3*(k_v+1)^2*(k_t+1)
/// spherical-harmonics coefficients with k_v = 3, k_t = 2.
inline int param_count_per_gaussian_4dgs() { return 17 + 3 * 4 * 4 * 3; }

}  // namespace mega
