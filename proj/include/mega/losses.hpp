#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mega/errors.hpp"
#include "mega/image.hpp"

namespace mega {

/// Mean absolute error over all pixels and channels.
inline double l1_loss(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw ConfigError("l1_loss: image dimensions mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return acc / static_cast<double>(a.data.size());
}

/// Adds weight * dL1/d(a) into d_a.
inline void l1_loss_backward(const Image& a, const Image& b, double weight, Image& d_a) {
  const double scale = weight / static_cast<double>(a.data.size());
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double diff = a.data[i] - b.data[i];
    if (diff > 0.0)
      d_a.data[i] += scale;
    else if (diff < 0.0)
      d_a.data[i] -= scale;
  }
}

struct SsimWindow {
  int size = 11;
  double sigma = 1.5;
  Eigen::MatrixXd weights;  // normalized 2D Gaussian taps

  static SsimWindow make(int size = 11, double sigma = 1.5) {
    SsimWindow w;
    w.size = size;
    w.sigma = sigma;
    Eigen::VectorXd g(size);
    const double c = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    g /= g.sum();
    w.weights = g * g.transpose();
    return w;
  }
};

/// Mean SSIM over fully supported (valid) 11x11 windows, averaged over
/// channels. Gaussian-weighted statistics, C1 = (0.01 range)^2,
/// C2 = (0.03 range)^2.
inline double ssim(const Image& a, const Image& b, double range = 1.0,
                   const SsimWindow& win = SsimWindow::make()) {
  if (a.width != b.width || a.height != b.height)
    throw ConfigError("ssim: image dimensions mismatch");
  if (a.width < win.size || a.height < win.size)
    throw ConfigError("ssim: image smaller than filter window");
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const int n = win.size;
  double acc = 0.0;
  long count = 0;
  for (int c = 0; c < 3; ++c) {
    for (int wy = 0; wy + n <= a.height; ++wy) {
      for (int wx = 0; wx + n <= a.width; ++wx) {
        double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
        for (int j = 0; j < n; ++j) {
          for (int i = 0; i < n; ++i) {
            const double w = win.weights(j, i);
            const double x = a.at(wx + i, wy + j, c);
            const double y = b.at(wx + i, wy + j, c);
            mu1 += w * x;
            mu2 += w * y;
            m11 += w * x * x;
            m22 += w * y * y;
            m12 += w * x * y;
          }
        }
        const double s1 = m11 - mu1 * mu1;
        const double s2 = m22 - mu2 * mu2;
        const double s12 = m12 - mu1 * mu2;
        const double num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2);
        const double den = (mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2);
        acc += num / den;
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

/// Structural similarity loss 1 - SSIM (range 1).
inline double ssim_loss(const Image& rendered, const Image& target) {
  return 1.0 - ssim(rendered, target, 1.0);
}

/// Adds weight * d(1 - SSIM)/d(rendered) into d_a.
inline void ssim_loss_backward(const Image& a, const Image& b, double weight, Image& d_a,
                               double range = 1.0, const SsimWindow& win = SsimWindow::make()) {
  if (a.width != b.width || a.height != b.height)
    throw ConfigError("ssim: image dimensions mismatch");
  if (a.width < win.size || a.height < win.size)
    throw ConfigError("ssim: image smaller than filter window");
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const int n = win.size;
  const long count =
      3L * static_cast<long>(a.height - n + 1) * static_cast<long>(a.width - n + 1);
  const double scale = -weight / static_cast<double>(count);  // loss = 1 - mean(S)
  for (int c = 0; c < 3; ++c) {
    for (int wy = 0; wy + n <= a.height; ++wy) {
      for (int wx = 0; wx + n <= a.width; ++wx) {
        double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
        for (int j = 0; j < n; ++j) {
          for (int i = 0; i < n; ++i) {
            const double w = win.weights(j, i);
            const double x = a.at(wx + i, wy + j, c);
            const double y = b.at(wx + i, wy + j, c);
            mu1 += w * x;
            mu2 += w * y;
            m11 += w * x * x;
            m22 += w * y * y;
            m12 += w * x * y;
          }
        }
        const double s1 = m11 - mu1 * mu1;
        const double s2 = m22 - mu2 * mu2;
        const double s12 = m12 - mu1 * mu2;
        const double a1 = 2.0 * mu1 * mu2 + c1;
        const double a2 = 2.0 * s12 + c2;
        const double b1 = mu1 * mu1 + mu2 * mu2 + c1;
        const double b2 = s1 + s2 + c2;
        const double den = b1 * b2;
        const double s_val = a1 * a2 / den;
        const double ds_dmu1 = 2.0 * mu2 * a2 / den - s_val * 2.0 * mu1 / b1;
        const double ds_ds12 = 2.0 * a1 / den;
        const double ds_ds1 = -s_val / b2;
        for (int j = 0; j < n; ++j) {
          for (int i = 0; i < n; ++i) {
            const double w = win.weights(j, i);
            const double x = a.at(wx + i, wy + j, c);
            const double y = b.at(wx + i, wy + j, c);
            const double ds_dx =
                w * (ds_dmu1 + ds_ds1 * 2.0 * (x - mu1) + ds_ds12 * (y - mu2));
            d_a.at(wx + i, wy + j, c) += scale * ds_dx;
          }
        }
      }
    }
  }
}

constexpr double kOpacityLogFloor = 1e-12;

/// Mean of -o log(o): zero iff every opacity is 1, maximal at o = 1/e.
inline double opacity_entropy_loss(const Eigen::VectorXd& opacities) {
  if (opacities.size() == 0) throw InvalidParameter("opacity_entropy_loss: empty vector");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < opacities.size(); ++i) {
    const double o = std::max(opacities[i], kOpacityLogFloor);
    acc += -opacities[i] * std::log(o);
  }
  return acc / static_cast<double>(opacities.size());
}

/// Per-element gradient -(log o + 1) / N.
inline Eigen::VectorXd opacity_entropy_grad(const Eigen::VectorXd& opacities) {
  if (opacities.size() == 0) throw InvalidParameter("opacity_entropy_loss: empty vector");
  Eigen::VectorXd g(opacities.size());
  const double inv_n = 1.0 / static_cast<double>(opacities.size());
  for (Eigen::Index i = 0; i < opacities.size(); ++i) {
    const double o = std::max(opacities[i], kOpacityLogFloor);
    g[i] = -(std::log(o) + 1.0) * inv_n;
  }
  return g;
}

struct LossBreakdown {
  double total = 0.0;
  double l1 = 0.0;
  double ssim_loss = 0.0;
  double l_opa = 0.0;
};

/// L = (1 - lambda) L1 + lambda Lssim + kappa Lopa, with optional gradients
/// for the rendered image and the opacity vector.
inline LossBreakdown total_loss(const Image& rendered, const Image& target,
                                const Eigen::VectorXd& opacities, double lambda, double kappa,
                                Image* d_image = nullptr, Eigen::VectorXd* d_opacity = nullptr) {
  LossBreakdown out;
  out.l1 = l1_loss(rendered, target);
  out.ssim_loss = lambda != 0.0 ? mega::ssim_loss(rendered, target) : 0.0;
  out.l_opa = kappa != 0.0 && opacities.size() > 0 ? opacity_entropy_loss(opacities) : 0.0;
  out.total = (1.0 - lambda) * out.l1 + lambda * out.ssim_loss + kappa * out.l_opa;
  if (d_image) {
    l1_loss_backward(rendered, target, 1.0 - lambda, *d_image);
    if (lambda != 0.0) ssim_loss_backward(rendered, target, lambda, *d_image);
  }
  if (d_opacity && kappa != 0.0 && opacities.size() > 0)
    *d_opacity += kappa * opacity_entropy_grad(opacities);
  return out;
}

}  // namespace mega
