#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "mega/errors.hpp"
#include "mega/quaternion.hpp"

namespace mega {

/// One 4D Gaussian primitive. Scales are stored as log-scales and opacity as a
/// logit so positivity/range constraints hold unconditionally under gradient
/// updates; activations happen at the use site.
struct Gaussian4D {
  Eigen::Vector4d mu4 = Eigen::Vector4d::Zero();  // (x, y, z, t), t in [0,1]
  Quaternion q_l = Quaternion::identity();
  Quaternion q_r = Quaternion::identity();
  Eigen::Vector4d s4 = Eigen::Vector4d::Zero();   // log-scales
  Eigen::Vector3d c_dc = Eigen::Vector3d::Zero(); // pre-sigmoid color logits
  double o_logit = 0.0;                           // spatial opacity logit
};

/// Time-t slice of a 4D Gaussian.
struct Sliced3D {
  Eigen::Vector3d mu3_t;      // time-variant 3D center
  Eigen::Matrix3d sigma3;     // time-invariant 3D covariance
  double temporal_opacity;    // in (0, 1], 1 iff t == mu_t
};

/// Structure-of-arrays Gaussian collection. All arrays share the same row count.
struct GaussianCloud {
  Eigen::MatrixX4d mu4;
  Eigen::MatrixX4d q_l;
  Eigen::MatrixX4d q_r;
  Eigen::MatrixX4d s4;
  Eigen::MatrixX3d c_dc;
  Eigen::VectorXd o_logit;

  GaussianCloud() : mu4(0, 4), q_l(0, 4), q_r(0, 4), s4(0, 4), c_dc(0, 3), o_logit(0) {}

  static GaussianCloud sized(int n) {
    GaussianCloud c;
    c.mu4.setZero(n, 4);
    c.q_l.setZero(n, 4);
    c.q_l.col(0).setOnes();
    c.q_r = c.q_l;
    c.s4.setZero(n, 4);
    c.c_dc.setZero(n, 3);
    c.o_logit.setZero(n);
    return c;
  }

  int count() const { return static_cast<int>(mu4.rows()); }

  Gaussian4D get(int i) const {
    Gaussian4D g;
    g.mu4 = mu4.row(i);
    g.q_l = Quaternion::from_vec(q_l.row(i));
    g.q_r = Quaternion::from_vec(q_r.row(i));
    g.s4 = s4.row(i);
    g.c_dc = c_dc.row(i);
    g.o_logit = o_logit[i];
    return g;
  }

  void set(int i, const Gaussian4D& g) {
    mu4.row(i) = g.mu4;
    q_l.row(i) = g.q_l.to_vec();
    q_r.row(i) = g.q_r.to_vec();
    s4.row(i) = g.s4;
    c_dc.row(i) = g.c_dc;
    o_logit[i] = g.o_logit;
  }

  /// New cloud holding rows `idx` in the given order.
  GaussianCloud select(const std::vector<int>& idx) const {
    GaussianCloud out = sized(static_cast<int>(idx.size()));
    for (int k = 0; k < out.count(); ++k) {
      out.mu4.row(k) = mu4.row(idx[k]);
      out.q_l.row(k) = q_l.row(idx[k]);
      out.q_r.row(k) = q_r.row(idx[k]);
      out.s4.row(k) = s4.row(idx[k]);
      out.c_dc.row(k) = c_dc.row(idx[k]);
      out.o_logit[k] = o_logit[idx[k]];
    }
    return out;
  }

  void append(const GaussianCloud& o) {
    const int n = count(), m = o.count();
    mu4.conservativeResize(n + m, Eigen::NoChange);
    q_l.conservativeResize(n + m, Eigen::NoChange);
    q_r.conservativeResize(n + m, Eigen::NoChange);
    s4.conservativeResize(n + m, Eigen::NoChange);
    c_dc.conservativeResize(n + m, Eigen::NoChange);
    o_logit.conservativeResize(n + m);
    mu4.bottomRows(m) = o.mu4;
    q_l.bottomRows(m) = o.q_l;
    q_r.bottomRows(m) = o.q_r;
    s4.bottomRows(m) = o.s4;
    c_dc.bottomRows(m) = o.c_dc;
    o_logit.tail(m) = o.o_logit;
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// 4D covariance: R * diag(exp(s4))^2 * R^T with R = rotor4(q_l, q_r).
inline Eigen::Matrix4d covariance4(const Gaussian4D& g) {
  const Eigen::Matrix4d r = rotor4(g.q_l, g.q_r);
  const Eigen::Vector4d d2 = (2.0 * g.s4).array().exp();
  return r * d2.asDiagonal() * r.transpose();
}

constexpr double kMinTemporalVariance = 1e-12;

/// Forward intermediates for one slice, kept for the analytic backward pass.
struct SliceCache {
  Eigen::Vector4d n_l, n_r;   // normalized quaternions
  Eigen::Matrix4d rot;        // rotor4
  Eigen::Vector4d d2;         // exp(2 * s4)
  Eigen::Matrix4d cov4;       // full 4D covariance
  Eigen::Matrix3d spatial;    // U block
  Eigen::Vector3d mixed;      // V block
  double w_raw = 0.0;         // cov4(3,3) before clamping
  double w = 0.0;             // clamped temporal variance
  double dt = 0.0;            // t - mu_t
  Sliced3D out;
};

inline SliceCache slice_with_cache(const Gaussian4D& g, double t) {
  SliceCache c;
  if (g.q_l.norm() < kMinQuaternionNorm)
    throw InvalidParameter("slice: zero-norm quaternion at index 0 (left)");
  if (g.q_r.norm() < kMinQuaternionNorm)
    throw InvalidParameter("slice: zero-norm quaternion at index 1 (right)");
  c.n_l = g.q_l.normalized().to_vec();
  c.n_r = g.q_r.normalized().to_vec();
  c.rot = quat_left_matrix(Quaternion::from_vec(c.n_l)) *
          quat_right_matrix(Quaternion::from_vec(c.n_r));
  c.d2 = (2.0 * g.s4).array().exp();
  c.cov4 = c.rot * c.d2.asDiagonal() * c.rot.transpose();
  c.spatial = c.cov4.topLeftCorner<3, 3>();
  c.mixed = c.cov4.block<3, 1>(0, 3);
  c.w_raw = c.cov4(3, 3);
  c.w = std::max(c.w_raw, kMinTemporalVariance);
  c.dt = t - g.mu4[3];
  c.out.sigma3 = c.spatial - (c.mixed * c.mixed.transpose()) / c.w;
  c.out.mu3_t = g.mu4.head<3>() + (c.dt / c.w) * c.mixed;
  c.out.temporal_opacity = std::exp(-(c.dt * c.dt) / (2.0 * c.w));
  return c;
}

/// Time-t slice: conditional 3D Gaussian plus the 1D temporal decay opacity.
inline Sliced3D slice(const Gaussian4D& g, double t) { return slice_with_cache(g, t).out; }

/// Gradients of a scalar loss w.r.t. one Gaussian's geometric attributes.
struct GaussianGrads {
  Eigen::Vector4d mu4 = Eigen::Vector4d::Zero();
  Eigen::Vector4d s4 = Eigen::Vector4d::Zero();
  Eigen::Vector4d q_l = Eigen::Vector4d::Zero();
  Eigen::Vector4d q_r = Eigen::Vector4d::Zero();
};
using SliceGrads = GaussianGrads;

/// Pulls upstream gradients on (sigma3, mu3_t, temporal_opacity) back to the
/// Gaussian's mu4, log-scales, and unnormalized quaternions.
inline void slice_backward(const Gaussian4D& g, const SliceCache& c,
                           const Eigen::Matrix3d& g_sigma3, const Eigen::Vector3d& g_mu3t,
                           double g_sigma_t, SliceGrads& out) {
  const double w = c.w;
  const Eigen::Vector3d v = c.mixed;
  const double st = c.out.temporal_opacity;

  double g_dt = 0.0, g_w = 0.0;
  Eigen::Vector3d g_v = Eigen::Vector3d::Zero();

  // mu3_t = mu3 + dt * V / W
  out.mu4.head<3>() += g_mu3t;
  g_dt += v.dot(g_mu3t) / w;
  g_v += (c.dt / w) * g_mu3t;
  g_w += -(c.dt / (w * w)) * v.dot(g_mu3t);

  // temporal_opacity = exp(-dt^2 / (2 W))
  g_dt += g_sigma_t * st * (-c.dt / w);
  g_w += g_sigma_t * st * (c.dt * c.dt) / (2.0 * w * w);

  // sigma3 = U - V V^T / W
  const Eigen::Matrix3d& g3 = g_sigma3;
  g_v += -(g3 + g3.transpose()) * v / w;
  g_w += v.dot(g3 * v) / (w * w);

  out.mu4[3] += -g_dt;  // dt = t - mu_t

  // Assemble the gradient on the full 4D covariance.
  Eigen::Matrix4d g_m = Eigen::Matrix4d::Zero();
  g_m.topLeftCorner<3, 3>() = g3;
  g_m.block<3, 1>(0, 3) = g_v;
  if (c.w_raw >= kMinTemporalVariance) g_m(3, 3) = g_w;

  // cov4 = R D R^T
  const Eigen::Matrix4d g_r = (g_m + g_m.transpose()) * c.rot * c.d2.asDiagonal();
  const Eigen::Vector4d g_d = (c.rot.transpose() * g_m * c.rot).diagonal();
  out.s4 += (g_d.array() * 2.0 * c.d2.array()).matrix();

  // R = L(n_l) * Rm(n_r); both factors are linear in their quaternion.
  const Quaternion a = Quaternion::from_vec(c.n_l);
  const Quaternion b = Quaternion::from_vec(c.n_r);
  const Eigen::Matrix4d rm_b = quat_right_matrix(b);
  const Eigen::Matrix4d l_a = quat_left_matrix(a);
  Eigen::Vector4d g_a, g_b;
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d e = Eigen::Vector4d::Zero();
    e[k] = 1.0;
    g_a[k] = (g_r.array() * (quat_left_matrix(Quaternion::from_vec(e)) * rm_b).array()).sum();
    g_b[k] = (g_r.array() * (l_a * quat_right_matrix(Quaternion::from_vec(e))).array()).sum();
  }
  out.q_l += normalize_backward(g.q_l.to_vec(), g_a);
  out.q_r += normalize_backward(g.q_r.to_vec(), g_b);
}

/// Indices (ascending) of Gaussians whose temporal opacity at time t exceeds
/// `threshold`. Compared in log space, so threshold 0 keeps every index.
inline std::vector<int> temporal_filter(const GaussianCloud& cloud, double t, double threshold) {
  if (threshold < 0.0 || threshold >= 1.0)
    throw InvalidParameter("temporal_filter: threshold must be in [0, 1)");
  const double bound = threshold > 0.0 ? -2.0 * std::log(threshold) : 0.0;
  std::vector<int> keep;
  keep.reserve(cloud.count());
  for (int i = 0; i < cloud.count(); ++i) {
    const Gaussian4D g = cloud.get(i);
    const Eigen::Matrix4d cov = covariance4(g);
    const double w = std::max(cov(3, 3), kMinTemporalVariance);
    const double dt = t - g.mu4[3];
    // sigma(t) > tau  <=>  dt^2 / W < -2 ln(tau)
    if (threshold == 0.0 || (dt * dt) / w < bound) keep.push_back(i);
  }
  return keep;
}

}  // namespace mega
