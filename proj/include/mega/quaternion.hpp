#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mega/errors.hpp"

namespace mega {

/// Quaternion in (w, x, y, z) order. Stored unnormalized; consumers normalize.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }

  static Quaternion from_vec(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }
  Eigen::Vector4d to_vec() const { return {w, x, y, z}; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quaternion normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }

  /// Hamilton product.
  Quaternion operator*(const Quaternion& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z,
            w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x,
            w * o.z + x * o.y - y * o.x + z * o.w};
  }

  Quaternion operator+(const Quaternion& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
};

/// Left-multiplication matrix: quat_left_matrix(q) * p == vec(q * p).
inline Eigen::Matrix4d quat_left_matrix(const Quaternion& q) {
  Eigen::Matrix4d m;
  m << q.w, -q.x, -q.y, -q.z,
       q.x,  q.w, -q.z,  q.y,
       q.y,  q.z,  q.w, -q.x,
       q.z, -q.y,  q.x,  q.w;
  return m;
}

/// Right-multiplication matrix: quat_right_matrix(q) * p == vec(p * q).
inline Eigen::Matrix4d quat_right_matrix(const Quaternion& q) {
  Eigen::Matrix4d m;
  m << q.w, -q.x, -q.y, -q.z,
       q.x,  q.w,  q.z, -q.y,
       q.y, -q.z,  q.w,  q.x,
       q.z,  q.y, -q.x,  q.w;
  return m;
}

constexpr double kMinQuaternionNorm = 1e-12;

/// SO(4) rotation from the left/right quaternion pair: R = L(q_l) * Rm(q_r),
/// both normalized first. `R * v` equals vec(q_l * v * q_r) for v read as a
/// quaternion. Throws InvalidParameter naming the offending argument index
/// (0 = left, 1 = right) on a zero-norm input.
inline Eigen::Matrix4d rotor4(const Quaternion& q_l, const Quaternion& q_r) {
  if (q_l.norm() < kMinQuaternionNorm)
    throw InvalidParameter("rotor4: zero-norm quaternion at index 0 (left)");
  if (q_r.norm() < kMinQuaternionNorm)
    throw InvalidParameter("rotor4: zero-norm quaternion at index 1 (right)");
  return quat_left_matrix(q_l.normalized()) * quat_right_matrix(q_r.normalized());
}

/// d(normalize)/dq pullback: maps an upstream gradient on the unit quaternion
/// to a gradient on the raw quaternion.
inline Eigen::Vector4d normalize_backward(const Eigen::Vector4d& raw, const Eigen::Vector4d& g_unit) {
  const double n = raw.norm();
  const Eigen::Vector4d u = raw / n;
  return (g_unit - u * u.dot(g_unit)) / n;
}

}  // namespace mega
