#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "mega/errors.hpp"

namespace mega {

/// Frequency positional encoding: per scalar p emits
/// [sin(2^0 pi p), cos(2^0 pi p), sin(2^1 pi p), cos(2^1 pi p), ...],
/// scalars concatenated in input order.
inline Eigen::VectorXd posenc(const Eigen::VectorXd& p, int num_freqs) {
  if (num_freqs < 1) throw InvalidParameter("posenc: frequency count must be >= 1");
  Eigen::VectorXd out(2 * num_freqs * p.size());
  int k = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    for (int l = 0; l < num_freqs; ++l) {
      const double arg = std::ldexp(M_PI, l) * p[i];
      out[k++] = std::sin(arg);
      out[k++] = std::cos(arg);
    }
  }
  return out;
}

inline Eigen::VectorXd posenc(double p, int num_freqs) {
  return posenc(Eigen::VectorXd::Constant(1, p), num_freqs);
}

/// Row-wise batched encoding: (N x k) -> (N x 2*k*num_freqs).
inline Eigen::MatrixXd posenc_rows(const Eigen::MatrixXd& p, int num_freqs) {
  if (num_freqs < 1) throw InvalidParameter("posenc: frequency count must be >= 1");
  Eigen::MatrixXd out(p.rows(), 2 * num_freqs * p.cols());
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    for (int l = 0; l < num_freqs; ++l) {
      const double f = std::ldexp(M_PI, l);
      out.col(2 * num_freqs * i + 2 * l) = (f * p.col(i)).array().sin();
      out.col(2 * num_freqs * i + 2 * l + 1) = (f * p.col(i)).array().cos();
    }
  }
  return out;
}

}  // namespace mega
