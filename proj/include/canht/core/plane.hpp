#pragma once

#include <cstdint>
#include <vector>

#include "canht/core/error.hpp"

namespace canht {

// Dense row-major 2-D grid, the unit of raster storage (one band, one mask).
template <typename T>
struct Plane {
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Plane() = default;
  Plane(int h_, int w_, T fill = T{}) : h(h_), w(w_) {
    if (h_ < 0 || w_ < 0) throw data_error("plane dimensions must be non-negative");
    v.assign(static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_), fill);
  }

  std::int64_t size() const {
    return static_cast<std::int64_t>(h) * static_cast<std::int64_t>(w);
  }

  T& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

  T* row(int y) { return v.data() + static_cast<std::size_t>(y) * w; }
  const T* row(int y) const { return v.data() + static_cast<std::size_t>(y) * w; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  void fill(T value) {
    for (T& e : v) e = value;
  }

  template <typename U>
  bool same_shape(const Plane<U>& o) const { return h == o.h && w == o.w; }
};

}  // namespace canht
