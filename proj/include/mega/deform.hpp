#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mega/errors.hpp"
#include "mega/gaussian.hpp"
#include "mega/mlp.hpp"
#include "mega/posenc.hpp"

namespace mega {

/// Raw multiplicative adjustments predicted for one Gaussian.
struct Deformation {
  Eigen::Vector4d m_mu4 = Eigen::Vector4d::Zero();
  Eigen::Vector4d m_s4 = Eigen::Vector4d::Zero();
  Eigen::Vector4d m_ql = Eigen::Vector4d::Zero();
  Eigen::Vector4d m_qr = Eigen::Vector4d::Zero();

  static Deformation from_raw(const Eigen::Matrix<double, 16, 1>& raw) {
    Deformation d;
    d.m_mu4 = raw.segment<4>(0);
    d.m_s4 = raw.segment<4>(4);
    d.m_ql = raw.segment<4>(8);
    d.m_qr = raw.segment<4>(12);
    return d;
  }
};

/// Temporal-viewpoint deformation network: one encoder per input group, a
/// two-layer ReLU fusion trunk, and a linear head of width 16. The head is
/// zero-initialized so a fresh predictor is an exact identity.
struct DeformPredictor {
  int freq_mu = 6;
  int freq_dv = 6;
  int freq_t = 10;
  Mlp enc_mu, enc_dv, enc_t;
  Mlp trunk;

  static DeformPredictor make(uint64_t seed, int hidden = 64, int freq_mu = 6, int freq_dv = 6,
                              int freq_t = 10) {
    std::mt19937_64 gen(seed);
    DeformPredictor p;
    p.freq_mu = freq_mu;
    p.freq_dv = freq_dv;
    p.freq_t = freq_t;
    p.enc_mu = make_mlp({8 * freq_mu, hidden}, {Activation::Relu}, gen);
    p.enc_dv = make_mlp({6 * freq_dv, hidden}, {Activation::Relu}, gen);
    p.enc_t = make_mlp({2 * freq_t, hidden}, {Activation::Relu}, gen);
    p.trunk = make_mlp({3 * hidden, hidden, hidden, 16},
                       {Activation::Relu, Activation::Relu, Activation::None}, gen,
                       /*zero_final=*/true);
    return p;
  }

  size_t param_count() const {
    return enc_mu.param_count() + enc_dv.param_count() + enc_t.param_count() +
           trunk.param_count();
  }
};

struct DeformCache {
  MlpCache c_mu, c_dv, c_t, c_trunk;
  Eigen::MatrixXd raw;  // N x 16
  bool valid = false;
};

struct DeformGrads {
  MlpGrads enc_mu, enc_dv, enc_t, trunk;

  static DeformGrads zero(const DeformPredictor& p) {
    return {p.enc_mu.zero_grads(), p.enc_dv.zero_grads(), p.enc_t.zero_grads(),
            p.trunk.zero_grads()};
  }
  void add(const DeformGrads& o) {
    enc_mu.add(o.enc_mu);
    enc_dv.add(o.enc_dv);
    enc_t.add(o.enc_t);
    trunk.add(o.trunk);
  }
};

/// Batched deformation prediction. The encoded mu4 / d_v inputs carry a
/// stop-gradient contract: the backward pass never differentiates them.
inline Eigen::MatrixXd deform_forward_batch(const DeformPredictor& p, const Eigen::MatrixX4d& mu4,
                                            const Eigen::MatrixX3d& d_v, double t,
                                            DeformCache* cache = nullptr) {
  if (mu4.rows() != d_v.rows()) throw ConfigError("deform: mu4/d_v row mismatch");
  for (Eigen::Index i = 0; i < d_v.rows(); ++i) {
    if (std::abs(d_v.row(i).norm() - 1.0) > 1e-6)
      throw InvalidParameter("deform: view direction " + std::to_string(i) + " is not unit-norm");
  }
  const Eigen::Index n = mu4.rows();
  MlpCache local_mu, local_dv, local_t, local_trunk;
  MlpCache& cm = cache ? cache->c_mu : local_mu;
  MlpCache& cd = cache ? cache->c_dv : local_dv;
  MlpCache& ct = cache ? cache->c_t : local_t;
  MlpCache& ck = cache ? cache->c_trunk : local_trunk;

  const Eigen::MatrixXd e_mu = p.enc_mu.forward(posenc_rows(mu4, p.freq_mu), &cm);
  const Eigen::MatrixXd e_dv = p.enc_dv.forward(posenc_rows(d_v, p.freq_dv), &cd);
  const Eigen::MatrixXd e_t =
      p.enc_t.forward(posenc_rows(Eigen::MatrixXd::Constant(n, 1, t), p.freq_t), &ct);

  Eigen::MatrixXd fused(n, e_mu.cols() + e_dv.cols() + e_t.cols());
  fused << e_mu, e_dv, e_t;
  Eigen::MatrixXd raw = p.trunk.forward(fused, &ck);
  if (raw.cols() != 16) throw ConfigError("deform: trunk head must emit 16 outputs");
  if (cache) {
    cache->raw = raw;
    cache->valid = true;
  }
  return raw;
}

inline Deformation deform_forward(const DeformPredictor& p, const Eigen::Vector4d& mu4,
                                  const Eigen::Vector3d& d_v, double t,
                                  DeformCache* cache = nullptr) {
  Eigen::MatrixX4d m(1, 4);
  m.row(0) = mu4;
  Eigen::MatrixX3d d(1, 3);
  d.row(0) = d_v;
  const Eigen::MatrixXd raw = deform_forward_batch(p, m, d, t, cache);
  return Deformation::from_raw(raw.row(0).transpose());
}

/// Backpropagates upstream gradients on the raw 16-wide outputs into the
/// predictor parameters. Encoded inputs are stop-gradients, so nothing is
/// returned for them.
inline void deform_backward(const DeformPredictor& p, const DeformCache& cache,
                            const Eigen::MatrixXd& d_raw, DeformGrads& grads) {
  if (!cache.valid) throw StateError("deform: backward called without a forward cache");
  const Eigen::MatrixXd d_fused = p.trunk.backward(d_raw, cache.c_trunk, grads.trunk);
  const int w_mu = p.enc_mu.output_dim();
  const int w_dv = p.enc_dv.output_dim();
  const int w_t = p.enc_t.output_dim();
  p.enc_mu.backward(d_fused.leftCols(w_mu), cache.c_mu, grads.enc_mu);
  p.enc_dv.backward(d_fused.middleCols(w_mu, w_dv), cache.c_dv, grads.enc_dv);
  p.enc_t.backward(d_fused.rightCols(w_t), cache.c_t, grads.enc_t);
}

constexpr double kMinDeformedQuatNorm = 1e-9;

struct ApplyCache {
  Eigen::Vector4d res_l, res_r;  // unit + m
  double n_l = 1.0, n_r = 1.0;   // |unit + m|
  bool clamp_l = false, clamp_r = false;
};

/// Applies a Deformation: elementwise residual multiply on the 4D mean,
/// additive residual on log-scales, and Hamilton product with the normalized
/// residual quaternion. A zero Deformation reproduces `g` exactly. Degenerate
/// residual quaternions fall back to the prior rotation and are counted.
inline Gaussian4D apply_deformation(const Gaussian4D& g, const Deformation& d,
                                    int* clamp_count = nullptr, ApplyCache* cache = nullptr) {
  Gaussian4D out = g;
  out.mu4 = g.mu4.cwiseProduct(Eigen::Vector4d::Ones() + d.m_mu4);
  out.s4 = g.s4 + d.m_s4;

  auto rotate = [&](const Quaternion& q, const Eigen::Vector4d& m, Eigen::Vector4d* res_out,
                    double* n_out, bool* clamp_out) {
    const Eigen::Vector4d res = Eigen::Vector4d(1, 0, 0, 0) + m;
    const Quaternion prod = q * Quaternion::from_vec(res);
    const double n = res.norm();
    if (res_out) *res_out = res;
    if (n_out) *n_out = n;
    if (prod.norm() < kMinDeformedQuatNorm) {
      if (clamp_out) *clamp_out = true;
      if (clamp_count) ++(*clamp_count);
      return q;
    }
    if (clamp_out) *clamp_out = false;
    const Eigen::Vector4d v = prod.to_vec() / n;
    return Quaternion::from_vec(v);
  };
  out.q_l = rotate(g.q_l, d.m_ql, cache ? &cache->res_l : nullptr, cache ? &cache->n_l : nullptr,
                   cache ? &cache->clamp_l : nullptr);
  out.q_r = rotate(g.q_r, d.m_qr, cache ? &cache->res_r : nullptr, cache ? &cache->n_r : nullptr,
                   cache ? &cache->clamp_r : nullptr);
  return out;
}

/// Chain rule through apply_deformation: upstream gradients on the deformed
/// attributes are split into gradients on the original attributes and on the
/// Deformation components.
inline void apply_deformation_backward(const Gaussian4D& g, const Deformation& d,
                                       const ApplyCache& cache, const GaussianGrads& up,
                                       GaussianGrads& g_orig, Deformation& g_deform) {
  g_orig.mu4 += up.mu4.cwiseProduct(Eigen::Vector4d::Ones() + d.m_mu4);
  g_deform.m_mu4 += up.mu4.cwiseProduct(g.mu4);
  g_orig.s4 += up.s4;
  g_deform.m_s4 += up.s4;

  auto rotate_back = [](const Quaternion& q, const Eigen::Vector4d& res, double n, bool clamped,
                        const Eigen::Vector4d& g_out, Eigen::Vector4d& g_q,
                        Eigen::Vector4d& g_m) {
    if (clamped) {
      g_q += g_out;
      return;
    }
    // out = (q x res) / n
    const Eigen::Vector4d g_prod = g_out / n;
    const Eigen::Vector4d prod = quat_left_matrix(q) * res;
    const double g_n = -prod.dot(g_out) / (n * n);
    g_q += quat_right_matrix(Quaternion::from_vec(res)).transpose() * g_prod;
    g_m += quat_left_matrix(q).transpose() * g_prod + (res / n) * g_n;
  };
  rotate_back(g.q_l, cache.res_l, cache.n_l, cache.clamp_l, up.q_l, g_orig.q_l, g_deform.m_ql);
  rotate_back(g.q_r, cache.res_r, cache.n_r, cache.clamp_r, up.q_r, g_orig.q_r, g_deform.m_qr);
}

}  // namespace mega
