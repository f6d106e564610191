#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "canht/core/error.hpp"

namespace canht::nn {

// Dense NCHW tensor. Weights reuse the same container:
//   pointwise conv  (out_ch, in_ch, 1, 1)
//   depthwise conv  (ch, 1, k, k)
//   bias / BN vecs  (ch, 1, 1, 1)
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T{}) : n(n_), c(c_), h(h_), w(w_) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw data_error("tensor dimensions must be non-negative");
    v.assign(static_cast<std::size_t>(size()), fill);
  }

  std::int64_t size() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }

  std::int64_t plane() const { return static_cast<std::int64_t>(h) * w; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  // Pointer to the (in, ic) spatial plane.
  T* chan(int in, int ic) {
    return v.data() + (static_cast<std::int64_t>(in) * c + ic) * plane();
  }
  const T* chan(int in, int ic) const {
    return v.data() + (static_cast<std::int64_t>(in) * c + ic) * plane();
  }

  T& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::int64_t>(in) * c + ic) * h + iy) * w + ix];
  }
  const T& at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::int64_t>(in) * c + ic) * h + iy) * w + ix];
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  static Tensor4 like(const Tensor4& o, T fill = T{}) {
    return Tensor4(o.n, o.c, o.h, o.w, fill);
  }

  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw canht::data_error(what);
}

}  // namespace canht::nn
