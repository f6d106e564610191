#pragma once

#include <cmath>
#include <cstdint>

#include "canht/core/error.hpp"
#include "canht/net/network.hpp"
#include "canht/nn/tensor.hpp"

namespace canht::train {

// Masked regression objective:
//   total = mean over valid target pixels of (pred - target)^2
//         + lambda * (1 / W) * sum over all trainable parameters of w^2
// where W is the trainable parameter count (biases and batchnorm affine
// parameters included). Invalid target pixels contribute nothing to either
// the value or the gradient, and their stored target values are never read
// (they may be NaN).
struct LossValue {
  double data_term = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  std::int64_t n_valid = 0;
};

template <typename T>
LossValue masked_mse(const nn::Tensor4<T>& pred, const nn::Tensor4<T>& target,
                     const nn::Tensor4<std::uint8_t>& valid, double lambda,
                     double weight_sq_sum, std::int64_t weight_count) {
  nn::require_shape(pred.same_shape(target) && pred.n == valid.n &&
                        pred.c == valid.c && pred.h == valid.h && pred.w == valid.w,
                    "loss: prediction/target/mask shapes differ");
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (!valid.v[static_cast<std::size_t>(i)]) continue;
    const double r = static_cast<double>(pred.v[static_cast<std::size_t>(i)]) -
                     static_cast<double>(target.v[static_cast<std::size_t>(i)]);
    sum += r * r;
    ++n;
  }
  if (n == 0) throw data_error("loss: no valid target pixels in the batch");
  LossValue out;
  out.n_valid = n;
  out.data_term = sum / static_cast<double>(n);
  out.penalty = weight_count > 0
                    ? lambda * weight_sq_sum / static_cast<double>(weight_count)
                    : 0.0;
  out.total = out.data_term + out.penalty;
  return out;
}

// d(data term)/d(pred): 2 * (pred - target) / n_valid on valid pixels, 0
// elsewhere.
template <typename T>
nn::Tensor4<T> masked_mse_grad(const nn::Tensor4<T>& pred,
                               const nn::Tensor4<T>& target,
                               const nn::Tensor4<std::uint8_t>& valid) {
  nn::Tensor4<T> d = nn::Tensor4<T>::like(pred);
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i)
    if (valid.v[static_cast<std::size_t>(i)]) ++n;
  if (n == 0) throw data_error("loss: no valid target pixels in the batch");
  const double scale = 2.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (!valid.v[static_cast<std::size_t>(i)]) continue;
    d.v[static_cast<std::size_t>(i)] = static_cast<T>(
        scale * (static_cast<double>(pred.v[static_cast<std::size_t>(i)]) -
                 static_cast<double>(target.v[static_cast<std::size_t>(i)])));
  }
  return d;
}

// Sum of squares and element count over the trainable tensors.
template <typename T>
void weight_square_sum(std::vector<net::ParamRef<T>>& refs, double* sq_sum,
                       std::int64_t* count) {
  double s = 0.0;
  std::int64_t n = 0;
  for (const net::ParamRef<T>& ref : refs) {
    if (!ref.trainable) continue;
    for (const T& v : ref.tensor->v) s += static_cast<double>(v) * static_cast<double>(v);
    n += ref.tensor->size();
  }
  *sq_sum = s;
  *count = n;
}

// Adds the penalty gradient 2 * lambda * w / W to gradients aligned with the
// trainable entries of `refs`.
template <typename T>
void add_penalty_grad(std::vector<net::ParamRef<T>>& refs, double lambda,
                      std::int64_t weight_count, net::Gradients<T>& grads) {
  if (lambda == 0.0 || weight_count == 0) return;
  const double scale = 2.0 * lambda / static_cast<double>(weight_count);
  std::size_t j = 0;
  for (const net::ParamRef<T>& ref : refs) {
    if (!ref.trainable) continue;
    nn::Tensor4<T>& g = grads.g[j++];
    nn::require_shape(g.same_shape(*ref.tensor),
                      "penalty gradient: shape mismatch for " + ref.name);
    for (std::int64_t i = 0; i < g.size(); ++i)
      g.v[static_cast<std::size_t>(i)] += static_cast<T>(
          scale * static_cast<double>(ref.tensor->v[static_cast<std::size_t>(i)]));
  }
}

}  // namespace canht::train
