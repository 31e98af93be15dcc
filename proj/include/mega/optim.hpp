#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mega/errors.hpp"
#include "mega/mlp.hpp"

namespace mega {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

/// First/second moment estimates for one flat parameter block.
struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;

  static AdamState sized(Eigen::Index n) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
  }
};

/// Standard Adam update with bias correction, in place.
inline void adam_step(double* params, const double* grads, Eigen::Index n, AdamState& state,
                      double lr, const AdamParams& ap = {}) {
  if (state.m.size() != n || state.v.size() != n)
    throw ConfigError("adam_step: state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(state.step));
  for (Eigen::Index i = 0; i < n; ++i) {
    state.m[i] = ap.beta1 * state.m[i] + (1.0 - ap.beta1) * grads[i];
    state.v[i] = ap.beta2 * state.v[i] + (1.0 - ap.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + ap.eps);
  }
}

/// Adam over every layer of an Mlp, using one state per Mlp (weights and
/// biases flattened layer by layer). Optional decoupled weight decay on the
/// weight matrices.
inline void adam_step_mlp(Mlp& mlp, const MlpGrads& grads, AdamState& state, double lr,
                          double weight_decay = 0.0, const AdamParams& ap = {}) {
  Eigen::Index total = 0;
  for (const auto& l : mlp.layers) total += l.weight.size() + l.bias.size();
  if (state.m.size() == 0) state = AdamState::sized(total);
  if (state.m.size() != total) throw ConfigError("adam_step_mlp: state size mismatch");

  ++state.step;
  const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(state.step));
  Eigen::Index off = 0;
  for (size_t li = 0; li < mlp.layers.size(); ++li) {
    auto update = [&](double* p, const double* g, Eigen::Index n, bool decay) {
      for (Eigen::Index i = 0; i < n; ++i) {
        state.m[off] = ap.beta1 * state.m[off] + (1.0 - ap.beta1) * g[i];
        state.v[off] = ap.beta2 * state.v[off] + (1.0 - ap.beta2) * g[i] * g[i];
        const double m_hat = state.m[off] / bc1;
        const double v_hat = state.v[off] / bc2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + ap.eps);
        if (decay) p[i] -= lr * weight_decay * p[i];
        ++off;
      }
    };
    update(mlp.layers[li].weight.data(), grads.d_weight[li].data(),
           mlp.layers[li].weight.size(), weight_decay != 0.0);
    update(mlp.layers[li].bias.data(), grads.d_bias[li].data(), mlp.layers[li].bias.size(),
           false);
  }
}

/// Rebuilds an Adam state after rows of an (old_rows x width) column-major
/// parameter block were reordered or created. source[k] is the old row
/// feeding new row k, or -1 for a fresh row (zeroed moments). The step
/// counter is preserved.
inline AdamState remap_adam_rows(const AdamState& state, const std::vector<int>& source,
                                 int old_rows, int width) {
  const auto new_rows = static_cast<Eigen::Index>(source.size());
  AdamState out = AdamState::sized(new_rows * width);
  out.step = state.step;
  Eigen::Map<const Eigen::MatrixXd> m_old(state.m.data(), old_rows, width);
  Eigen::Map<const Eigen::MatrixXd> v_old(state.v.data(), old_rows, width);
  Eigen::Map<Eigen::MatrixXd> m_new(out.m.data(), new_rows, width);
  Eigen::Map<Eigen::MatrixXd> v_new(out.v.data(), new_rows, width);
  for (Eigen::Index k = 0; k < new_rows; ++k) {
    if (source[k] < 0) continue;
    m_new.row(k) = m_old.row(source[k]);
    v_new.row(k) = v_old.row(source[k]);
  }
  return out;
}

}  // namespace mega
