#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "canht/core/error.hpp"
#include "canht/net/network.hpp"

namespace canht::train {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;  // added outside the square root
};

// First/second moment estimates, kept in double and aligned with the
// trainable entries of param_refs.
template <typename T>
struct AdamState {
  std::int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void init(std::vector<net::ParamRef<T>>& refs) {
    t = 0;
    m.clear();
    v.clear();
    for (const net::ParamRef<T>& ref : refs) {
      if (!ref.trainable) continue;
      m.emplace_back(static_cast<std::size_t>(ref.tensor->size()), 0.0);
      v.emplace_back(static_cast<std::size_t>(ref.tensor->size()), 0.0);
    }
  }
};

// One update with bias correction:
//   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
//   theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Throws numeric_error (naming the parameter tensor) on a non-finite
// gradient.
template <typename T>
void adam_step(std::vector<net::ParamRef<T>>& refs, const net::Gradients<T>& grads,
               AdamState<T>& state, const AdamConfig& cfg) {
  std::size_t n_trainable = 0;
  for (const net::ParamRef<T>& ref : refs)
    if (ref.trainable) ++n_trainable;
  if (grads.g.size() != n_trainable || state.m.size() != n_trainable)
    throw data_error("optimizer state/gradient list size mismatch");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

  std::size_t j = 0;
  for (net::ParamRef<T>& ref : refs) {
    if (!ref.trainable) continue;
    nn::Tensor4<T>& theta = *ref.tensor;
    const nn::Tensor4<T>& g = grads.g[j];
    nn::require_shape(g.same_shape(theta),
                      "optimizer: gradient shape mismatch for " + ref.name);
    std::vector<double>& m = state.m[j];
    std::vector<double>& v = state.v[j];
    for (std::int64_t i = 0; i < theta.size(); ++i) {
      const double gi = static_cast<double>(g.v[static_cast<std::size_t>(i)]);
      if (!std::isfinite(gi))
        throw numeric_error("non-finite gradient in " + ref.name);
      double& mi = m[static_cast<std::size_t>(i)];
      double& vi = v[static_cast<std::size_t>(i)];
      mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
      vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      theta.v[static_cast<std::size_t>(i)] -=
          static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    ++j;
  }
}

}  // namespace canht::train
