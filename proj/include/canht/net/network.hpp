#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "canht/core/error.hpp"
#include "canht/core/rng.hpp"
#include "canht/nn/layers.hpp"
#include "canht/nn/tensor.hpp"

namespace canht::net {

enum class KernelMode { k3x3, k1x1 };

inline std::string kernel_mode_name(KernelMode m) {
  return m == KernelMode::k3x3 ? "3x3" : "1x1";
}

inline KernelMode kernel_mode_from_name(const std::string& s) {
  if (s == "3x3") return KernelMode::k3x3;
  if (s == "1x1") return KernelMode::k1x1;
  throw config_error("kernel_mode must be '3x3' or '1x1', got '" + s + "'");
}

// Fully convolutional, stride 1 throughout, so the network maps any H x W
// input to an H x W prediction.
struct ModelConfig {
  int in_channels = 13;
  int trunk_width = 728;
  int n_blocks = 18;
  std::array<int, 2> entry_depths = {128, 364};
  KernelMode kernel_mode = KernelMode::k3x3;
  std::uint64_t init_seed = 0;

  int kernel_size() const { return kernel_mode == KernelMode::k3x3 ? 3 : 1; }

  // Half-width of the output's dependence window on the input: each residual
  // block applies two 3x3 convolutions.
  int receptive_radius() const {
    return kernel_mode == KernelMode::k3x3 ? 2 * n_blocks : 0;
  }

  void validate() const {
    if (in_channels < 1 || in_channels > 13)
      throw config_error("in_channels must be in [1, 13]");
    if (trunk_width < 1 || trunk_width > 4096)
      throw config_error("trunk_width must be in [1, 4096]");
    if (n_blocks < 1 || n_blocks > 64)
      throw config_error("n_blocks must be in [1, 64]");
    if (entry_depths[0] < 1 || entry_depths[1] < 1)
      throw config_error("entry depths must be positive");
  }
};

// One depthwise-separable unit: ReLU -> depthwise kxk (no bias) ->
// pointwise 1x1 (+bias) -> batch normalization.
template <typename T>
struct SepConvUnit {
  nn::Tensor4<T> dw_w;                 // (C,1,k,k)
  nn::Tensor4<T> pw_w;                 // (C,C,1,1)
  nn::Tensor4<T> pw_b;                 // (C,1,1,1)
  nn::Tensor4<T> bn_gamma, bn_beta;    // (C,1,1,1)
  nn::BatchNormState<T> bn_state;      // running mean/var
};

// Entry: three pointwise convolutions widening to the trunk, each followed by
// ReLU except the last, plus a learned pointwise projection of the raw input
// added as a skip. Blocks: residual pairs of SepConv units (identity skip,
// no activation after the add). Head: pointwise 1x1 down to one channel.
template <typename T>
struct Network {
  ModelConfig cfg;

  nn::Tensor4<T> entry_w1, entry_b1;
  nn::Tensor4<T> entry_w2, entry_b2;
  nn::Tensor4<T> entry_w3, entry_b3;
  nn::Tensor4<T> skip_w, skip_b;

  std::vector<std::array<SepConvUnit<T>, 2>> blocks;

  nn::Tensor4<T> head_w, head_b;
};

template <typename T>
struct ParamRef {
  std::string name;
  nn::Tensor4<T>* tensor;
  bool trainable;
};

namespace detail {

inline std::string block_tag(int i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "block%02d", i + 1);
  return buf;
}

}  // namespace detail

// Stable enumeration of every tensor in the model: trainable weights plus the
// batchnorm running statistics (trainable = false). Checkpoints and the
// optimizer both key off this order.
template <typename T>
std::vector<ParamRef<T>> param_refs(Network<T>& net) {
  std::vector<ParamRef<T>> refs;
  refs.push_back({"entry.conv1.w", &net.entry_w1, true});
  refs.push_back({"entry.conv1.b", &net.entry_b1, true});
  refs.push_back({"entry.conv2.w", &net.entry_w2, true});
  refs.push_back({"entry.conv2.b", &net.entry_b2, true});
  refs.push_back({"entry.conv3.w", &net.entry_w3, true});
  refs.push_back({"entry.conv3.b", &net.entry_b3, true});
  refs.push_back({"entry.skip.w", &net.skip_w, true});
  refs.push_back({"entry.skip.b", &net.skip_b, true});
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const std::string tag = detail::block_tag(static_cast<int>(i));
    for (int u = 0; u < 2; ++u) {
      SepConvUnit<T>& unit = net.blocks[i][static_cast<std::size_t>(u)];
      const std::string base = tag + ".unit" + std::to_string(u + 1);
      refs.push_back({base + ".dw.w", &unit.dw_w, true});
      refs.push_back({base + ".pw.w", &unit.pw_w, true});
      refs.push_back({base + ".pw.b", &unit.pw_b, true});
      refs.push_back({base + ".bn.gamma", &unit.bn_gamma, true});
      refs.push_back({base + ".bn.beta", &unit.bn_beta, true});
      refs.push_back({base + ".bn.running_mean", &unit.bn_state.running_mean, false});
      refs.push_back({base + ".bn.running_var", &unit.bn_state.running_var, false});
    }
  }
  refs.push_back({"head.w", &net.head_w, true});
  refs.push_back({"head.b", &net.head_b, true});
  return refs;
}

// He-style initialization: weights ~ N(0, 2 / fan_in) drawn in param_refs
// order from cfg.init_seed, biases and BN offsets zero, BN scales one,
// running stats (0, 1).
template <typename T>
Network<T> build(const ModelConfig& cfg) {
  cfg.validate();
  Network<T> net;
  net.cfg = cfg;
  const int cw = cfg.trunk_width;
  const int k = cfg.kernel_size();
  net.entry_w1 = nn::Tensor4<T>(cfg.entry_depths[0], cfg.in_channels, 1, 1);
  net.entry_b1 = nn::Tensor4<T>(cfg.entry_depths[0], 1, 1, 1);
  net.entry_w2 = nn::Tensor4<T>(cfg.entry_depths[1], cfg.entry_depths[0], 1, 1);
  net.entry_b2 = nn::Tensor4<T>(cfg.entry_depths[1], 1, 1, 1);
  net.entry_w3 = nn::Tensor4<T>(cw, cfg.entry_depths[1], 1, 1);
  net.entry_b3 = nn::Tensor4<T>(cw, 1, 1, 1);
  net.skip_w = nn::Tensor4<T>(cw, cfg.in_channels, 1, 1);
  net.skip_b = nn::Tensor4<T>(cw, 1, 1, 1);
  net.blocks.resize(static_cast<std::size_t>(cfg.n_blocks));
  for (auto& block : net.blocks) {
    for (auto& unit : block) {
      unit.dw_w = nn::Tensor4<T>(cw, 1, k, k);
      unit.pw_w = nn::Tensor4<T>(cw, cw, 1, 1);
      unit.pw_b = nn::Tensor4<T>(cw, 1, 1, 1);
      unit.bn_gamma = nn::Tensor4<T>(cw, 1, 1, 1, T(1));
      unit.bn_beta = nn::Tensor4<T>(cw, 1, 1, 1);
      unit.bn_state.running_mean = nn::Tensor4<T>(cw, 1, 1, 1);
      unit.bn_state.running_var = nn::Tensor4<T>(cw, 1, 1, 1, T(1));
    }
  }
  net.head_w = nn::Tensor4<T>(1, cw, 1, 1);
  net.head_b = nn::Tensor4<T>(1, 1, 1, 1);

  Rng rng(derive_seed(cfg.init_seed, "init"));
  for (ParamRef<T>& ref : param_refs(net)) {
    if (!ref.trainable) continue;
    const bool is_weight = ref.name.ends_with(".w");
    if (!is_weight) continue;  // biases, gamma, beta keep their fill values
    nn::Tensor4<T>& t = *ref.tensor;
    const int fan_in = t.c * t.h * t.w;  // pointwise: in_ch; depthwise: k*k
    const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.v) v = static_cast<T>(rng.normal(0.0, sigma));
  }
  return net;
}

// Parameter accounting (trainable tensors only).
struct ParamCounts {
  std::int64_t entry = 0;
  std::int64_t per_unit = 0;
  std::int64_t blocks = 0;
  std::int64_t head = 0;
  std::int64_t total = 0;
};

template <typename T>
ParamCounts count_params(Network<T>& net) {
  ParamCounts counts;
  for (const ParamRef<T>& ref : param_refs(net)) {
    if (!ref.trainable) continue;
    const std::int64_t n = ref.tensor->size();
    counts.total += n;
    if (ref.name.starts_with("entry.")) counts.entry += n;
    else if (ref.name.starts_with("head.")) counts.head += n;
    else counts.blocks += n;
  }
  if (!net.blocks.empty())
    counts.per_unit = counts.blocks / (2 * static_cast<std::int64_t>(net.blocks.size()));
  return counts;
}

// Everything the backward pass needs, captured by the training-mode forward.
template <typename T>
struct UnitCache {
  nn::Tensor4<T> in;        // unit input
  nn::Tensor4<T> relu_out;  // after ReLU
  nn::Tensor4<T> dw_out;    // after depthwise conv
  nn::BatchNormCache<T> bn;
};

template <typename T>
struct ForwardCache {
  nn::Tensor4<T> input;
  nn::Tensor4<T> e_a1, e_a2, e_a3;  // entry pre-activations / final linear
  nn::Tensor4<T> trunk_in;          // entry output
  std::vector<std::array<UnitCache<T>, 2>> units;
  nn::Tensor4<T> head_in;           // last block output
};

namespace detail {

template <typename T>
void check_finite(const nn::Tensor4<T>& t, const std::string& where) {
  for (const T& v : t.v) {
    if (!std::isfinite(static_cast<double>(v)))
      throw numeric_error("non-finite activation after " + where);
  }
}

}  // namespace detail

// Runs the network. Training mode uses batch statistics and (when `cache` is
// given) records intermediates for backward(); inference mode uses running
// statistics and mutates nothing. Activations are scanned for non-finite
// values after the entry, every block, and the head, and the first offender
// is reported by layer name.
template <typename T>
nn::Tensor4<T> forward(Network<T>& net, const nn::Tensor4<T>& x, bool training,
                       ForwardCache<T>* cache = nullptr) {
  nn::require_shape(x.c == net.cfg.in_channels,
                    "network expects " + std::to_string(net.cfg.in_channels) +
                        " input channels, got " + std::to_string(x.c));
  nn::require_shape(x.h >= 1 && x.w >= 1, "network input must be non-empty");
  const int h = x.h, w = x.w;
  if (cache) cache->input = x;

  nn::Tensor4<T> a1 = nn::conv_pointwise(x, net.entry_w1, &net.entry_b1);
  nn::Tensor4<T> r1 = nn::relu(a1);
  nn::Tensor4<T> a2 = nn::conv_pointwise(r1, net.entry_w2, &net.entry_b2);
  nn::Tensor4<T> r2 = nn::relu(a2);
  nn::Tensor4<T> a3 = nn::conv_pointwise(r2, net.entry_w3, &net.entry_b3);
  nn::Tensor4<T> skip = nn::conv_pointwise(x, net.skip_w, &net.skip_b);
  nn::Tensor4<T> cur = nn::add(a3, skip);
  nn::require_shape(cur.h == h && cur.w == w, "entry altered spatial dimensions");
  detail::check_finite(cur, "entry");
  if (cache) {
    cache->e_a1 = std::move(a1);
    cache->e_a2 = std::move(a2);
    cache->e_a3 = std::move(a3);
    cache->trunk_in = cur;
    cache->units.resize(net.blocks.size());
  }

  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    nn::Tensor4<T> block_in = cur;
    for (int u = 0; u < 2; ++u) {
      SepConvUnit<T>& unit = net.blocks[i][static_cast<std::size_t>(u)];
      UnitCache<T>* uc = cache ? &(*cache).units[i][static_cast<std::size_t>(u)] : nullptr;
      if (uc) uc->in = cur;
      nn::Tensor4<T> r = nn::relu(cur);
      nn::Tensor4<T> d = nn::conv_depthwise(r, unit.dw_w);
      nn::Tensor4<T> p = nn::conv_pointwise(d, unit.pw_w, &unit.pw_b);
      cur = nn::batchnorm_forward(p, unit.bn_gamma, unit.bn_beta, unit.bn_state,
                                  training, uc ? &uc->bn : nullptr);
      if (uc) {
        uc->relu_out = std::move(r);
        uc->dw_out = std::move(d);
      }
    }
    cur = nn::add(cur, block_in);
    nn::require_shape(cur.h == h && cur.w == w,
                      detail::block_tag(static_cast<int>(i)) + " altered spatial dimensions");
    detail::check_finite(cur, detail::block_tag(static_cast<int>(i)));
  }

  nn::Tensor4<T> y = nn::conv_pointwise(cur, net.head_w, &net.head_b);
  nn::require_shape(y.h == h && y.w == w && y.c == 1, "head altered output shape");
  detail::check_finite(y, "head");
  if (cache) {
    // The head input is the last block's output; keep it for the head grads.
    cache->head_in = std::move(cur);
  }
  return y;
}

// Gradients for every trainable tensor, in param_refs order restricted to
// trainable == true.
template <typename T>
struct Gradients {
  std::vector<nn::Tensor4<T>> g;
};

template <typename T>
void backward(Network<T>& net, const ForwardCache<T>& cache,
              const nn::Tensor4<T>& dout, Gradients<T>& grads) {
  std::vector<ParamRef<T>> refs = param_refs(net);
  std::vector<std::size_t> trainable_idx;
  grads.g.clear();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!refs[i].trainable) continue;
    trainable_idx.push_back(i);
    grads.g.emplace_back();
  }
  auto slot = [&](const std::string& name) -> nn::Tensor4<T>& {
    for (std::size_t j = 0; j < trainable_idx.size(); ++j)
      if (refs[trainable_idx[j]].name == name) return grads.g[j];
    throw data_error("internal: unknown gradient slot " + name);
  };

  // head
  nn::Tensor4<T> dcur;
  {
    nn::Tensor4<T> dw, db;
    nn::conv_pointwise_backward(cache.head_in, net.head_w, dout, &dcur, &dw, &db);
    slot("head.w") = std::move(dw);
    slot("head.b") = std::move(db);
  }

  // blocks, reversed
  for (int i = static_cast<int>(net.blocks.size()) - 1; i >= 0; --i) {
    const std::string tag = detail::block_tag(i);
    nn::Tensor4<T> d_resid = dcur;  // gradient flowing through the identity skip
    for (int u = 1; u >= 0; --u) {
      SepConvUnit<T>& unit = net.blocks[static_cast<std::size_t>(i)][static_cast<std::size_t>(u)];
      const UnitCache<T>& uc = cache.units[static_cast<std::size_t>(i)][static_cast<std::size_t>(u)];
      const std::string base = tag + ".unit" + std::to_string(u + 1);
      nn::Tensor4<T> dgamma, dbeta, dp;
      nn::batchnorm_backward(uc.bn, unit.bn_gamma, dcur, &dp, &dgamma, &dbeta);
      slot(base + ".bn.gamma") = std::move(dgamma);
      slot(base + ".bn.beta") = std::move(dbeta);
      nn::Tensor4<T> dd, dpw, dpb;
      nn::conv_pointwise_backward(uc.dw_out, unit.pw_w, dp, &dd, &dpw, &dpb);
      slot(base + ".pw.w") = std::move(dpw);
      slot(base + ".pw.b") = std::move(dpb);
      nn::Tensor4<T> dr, ddw;
      nn::conv_depthwise_backward(uc.relu_out, unit.dw_w, dd, &dr, &ddw);
      slot(base + ".dw.w") = std::move(ddw);
      dcur = nn::relu_backward(uc.in, dr);
    }
    dcur = nn::add(dcur, d_resid);
  }

  // entry
  {
    nn::Tensor4<T> dskip_w, dskip_b;
    nn::Tensor4<T> dx_skip;
    nn::conv_pointwise_backward(cache.input, net.skip_w, dcur, &dx_skip, &dskip_w,
                                &dskip_b);
    slot("entry.skip.w") = std::move(dskip_w);
    slot("entry.skip.b") = std::move(dskip_b);

    nn::Tensor4<T> r2 = nn::relu(cache.e_a2);
    nn::Tensor4<T> dr2, dw3, db3;
    nn::conv_pointwise_backward(r2, net.entry_w3, dcur, &dr2, &dw3, &db3);
    slot("entry.conv3.w") = std::move(dw3);
    slot("entry.conv3.b") = std::move(db3);
    nn::Tensor4<T> da2 = nn::relu_backward(cache.e_a2, dr2);

    nn::Tensor4<T> r1 = nn::relu(cache.e_a1);
    nn::Tensor4<T> dr1, dw2, db2;
    nn::conv_pointwise_backward(r1, net.entry_w2, da2, &dr1, &dw2, &db2);
    slot("entry.conv2.w") = std::move(dw2);
    slot("entry.conv2.b") = std::move(db2);
    nn::Tensor4<T> da1 = nn::relu_backward(cache.e_a1, dr1);

    nn::Tensor4<T> dw1, db1;
    nn::conv_pointwise_backward<T>(cache.input, net.entry_w1, da1, nullptr, &dw1, &db1);
    slot("entry.conv1.w") = std::move(dw1);
    slot("entry.conv1.b") = std::move(db1);
  }
}

}  // namespace canht::net
