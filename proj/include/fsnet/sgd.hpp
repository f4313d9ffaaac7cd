#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/network.hpp"

namespace fsnet {

struct SgdConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double momentum = 0.9;

  void validate() const {
    if (!(learning_rate > 0)) throw Error("sgd: learning_rate must be > 0");
    if (!(weight_decay >= 0)) throw Error("sgd: weight_decay must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw Error("sgd: momentum must lie in [0, 1)");
  }
};

/// Momentum buffers shaped like the parameters they drive.
template <typename T = double>
struct Velocity {
  std::vector<ConvLayer<T>> convs;
  std::vector<FcLayer<T>> fcs;
  std::vector<FcLayer<T>> heads;

  static Velocity zeros_like(const NetworkParams<T>& p) {
    Velocity v;
    for (const auto& c : p.convs) {
      v.convs.push_back({Tensor<T>(c.weight.shape()), std::vector<T>(c.bias.size()), c.stride,
                         c.pad});
    }
    auto fc_zero = [](const FcLayer<T>& f) {
      return FcLayer<T>{Matrix<T>(f.weight.rows(), f.weight.cols()),
                        std::vector<T>(f.bias.size())};
    };
    for (const auto& f : p.fcs) v.fcs.push_back(fc_zero(f));
    for (const auto& f : p.heads) v.heads.push_back(fc_zero(f));
    return v;
  }
};

namespace detail {

// v <- momentum * v - lr * (g + wd * p);  p <- p + v
template <typename T>
void sgd_update(std::span<T> p, std::span<const T> g, std::span<T> v, const SgdConfig& cfg) {
  if (p.size() != g.size() || p.size() != v.size()) {
    throw ShapeError("sgd: parameter/gradient/velocity sizes differ (" +
                     std::to_string(p.size()) + ", " + std::to_string(g.size()) + ", " +
                     std::to_string(v.size()) + ")");
  }
  const T mom = static_cast<T>(cfg.momentum);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = mom * v[i] - lr * (g[i] + wd * p[i]);
    p[i] += v[i];
  }
}

}  // namespace detail

/// Updates exactly the tensors present in `grads`: conv layers only when the gradient
/// carries them, the shared fc layers, and the single head branch `grads.branch`.
template <typename T>
void sgd_step(NetworkParams<T>& params, const Gradients<T>& grads, const SgdConfig& cfg,
              Velocity<T>& vel) {
  cfg.validate();
  if (vel.convs.size() != params.convs.size() || vel.fcs.size() != params.fcs.size() ||
      vel.heads.size() != params.heads.size()) {
    throw ShapeError("sgd: velocity state does not match the network");
  }
  if (!grads.convs.empty() && grads.convs.size() != params.convs.size()) {
    throw ShapeError("sgd: conv gradient count does not match the network");
  }
  if (grads.fcs.size() != params.fcs.size() || grads.branch >= params.heads.size()) {
    throw ShapeError("sgd: fc gradients do not match the network");
  }
  for (std::size_t i = 0; i < grads.convs.size(); ++i) {
    detail::sgd_update(params.convs[i].weight.values(),
                       std::span<const T>(grads.convs[i].weight.values()),
                       vel.convs[i].weight.values(), cfg);
    detail::sgd_update(std::span<T>(params.convs[i].bias), std::span<const T>(grads.convs[i].bias),
                       std::span<T>(vel.convs[i].bias), cfg);
  }
  auto fc = [&](FcLayer<T>& p, const FcLayer<T>& g, FcLayer<T>& v) {
    detail::sgd_update(p.weight.values(), std::span<const T>(g.weight.values()), v.weight.values(),
                       cfg);
    detail::sgd_update(std::span<T>(p.bias), std::span<const T>(g.bias), std::span<T>(v.bias),
                       cfg);
  };
  for (std::size_t i = 0; i < grads.fcs.size(); ++i) fc(params.fcs[i], grads.fcs[i], vel.fcs[i]);
  fc(params.heads[grads.branch], grads.head, vel.heads[grads.branch]);
}

}  // namespace fsnet
