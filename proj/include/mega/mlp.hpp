#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "mega/errors.hpp"

namespace mega {

enum class Activation { None, Relu };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation act = Activation::None;
};

/// Per-layer inputs and pre-activations from a forward pass.
struct MlpCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
  bool valid = false;
};

struct MlpGrads {
  std::vector<Eigen::MatrixXd> d_weight;
  std::vector<Eigen::VectorXd> d_bias;

  void add(const MlpGrads& o) {
    for (size_t i = 0; i < d_weight.size(); ++i) {
      d_weight[i] += o.d_weight[i];
      d_bias[i] += o.d_bias[i];
    }
  }
  void setZero() {
    for (auto& w : d_weight) w.setZero();
    for (auto& b : d_bias) b.setZero();
  }
};

/// Dense layer chain. Rows of the batch matrix are samples.
struct Mlp {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  MlpGrads zero_grads() const {
    MlpGrads g;
    for (const auto& l : layers) {
      g.d_weight.emplace_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      g.d_bias.emplace_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
    return g;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, MlpCache* cache = nullptr) const {
    if (x.cols() != input_dim())
      throw ConfigError("mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(input_dim()));
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    Eigen::MatrixXd h = x;
    for (const auto& l : layers) {
      if (cache) cache->inputs.push_back(h);
      Eigen::MatrixXd pre = (h * l.weight.transpose()).rowwise() + l.bias.transpose();
      if (cache) cache->pre.push_back(pre);
      h = (l.act == Activation::Relu) ? pre.cwiseMax(0.0) : std::move(pre);
    }
    if (cache) cache->valid = true;
    return h;
  }

  /// Accumulates parameter gradients into `grads` and returns the gradient
  /// w.r.t. the batch input.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& d_out, const MlpCache& cache,
                           MlpGrads& grads) const {
    if (!cache.valid || cache.inputs.size() != layers.size())
      throw StateError("mlp: backward called without a matching forward cache");
    Eigen::MatrixXd d = d_out;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      const DenseLayer& l = layers[i];
      if (l.act == Activation::Relu)
        d = (cache.pre[i].array() > 0.0).select(d, 0.0);
      grads.d_weight[i] += d.transpose() * cache.inputs[i];
      grads.d_bias[i] += d.colwise().sum().transpose();
      if (i > 0) d = d * l.weight;
    }
    return d * layers.front().weight;
  }
};

/// Xavier-uniform init; `zero_final` zeroes the last layer so the network
/// starts as an exact identity residual.
inline Mlp make_mlp(const std::vector<int>& dims, const std::vector<Activation>& acts,
                    std::mt19937_64& gen, bool zero_final = false) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw ConfigError("make_mlp: dims/activations mismatch");
  Mlp mlp;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.weight.resize(dims[i + 1], dims[i]);
    l.bias = Eigen::VectorXd::Zero(dims[i + 1]);
    l.act = acts[i];
    const double bound = std::sqrt(6.0 / (dims[i] + dims[i + 1]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = dist(gen);
    if (zero_final && i + 2 == dims.size()) l.weight.setZero();
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

}  // namespace mega
