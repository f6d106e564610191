#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "canht/nn/parallel.hpp"
#include "canht/nn/tensor.hpp"

// Stride-1, zero-padded ("same") convolution primitives with hand-written
// backward passes. Every kernel preserves spatial dimensions; shapes are
// checked on entry and violations throw. All kernels are deterministic:
// each output element is produced by one owner in a fixed reduction order,
// independent of the lane count.
namespace canht::nn {

namespace detail {

// ---- pointwise (1x1) convolution micro-kernels --------------------------
//
// One sample is a row-major matrix product: y[o, p] = b[o] + sum_i w[o, i] *
// x[i, p] with P = H*W spatial positions. The 4xTP register tile below is the
// hot loop of the whole toolkit; the fixed trip count lets the compiler keep
// the accumulators in vector registers.

inline constexpr int kPwTileP = 32;

template <typename T>
void pw_tile_full(const T* __restrict x, const T* __restrict w, const T* b,
                  T* __restrict y, int in_ch, std::int64_t pcols, int o0,
                  std::int64_t p0) {
  T acc[4][kPwTileP];
  for (int r = 0; r < 4; ++r) {
    const T bv = b ? b[o0 + r] : T(0);
    for (int j = 0; j < kPwTileP; ++j) acc[r][j] = bv;
  }
  const T* w0 = w + static_cast<std::int64_t>(o0 + 0) * in_ch;
  const T* w1 = w + static_cast<std::int64_t>(o0 + 1) * in_ch;
  const T* w2 = w + static_cast<std::int64_t>(o0 + 2) * in_ch;
  const T* w3 = w + static_cast<std::int64_t>(o0 + 3) * in_ch;
  for (int i = 0; i < in_ch; ++i) {
    const T* __restrict xr = x + i * pcols + p0;
    const T c0 = w0[i], c1 = w1[i], c2 = w2[i], c3 = w3[i];
    for (int j = 0; j < kPwTileP; ++j) {
      const T xv = xr[j];
      acc[0][j] += c0 * xv;
      acc[1][j] += c1 * xv;
      acc[2][j] += c2 * xv;
      acc[3][j] += c3 * xv;
    }
  }
  for (int r = 0; r < 4; ++r) {
    T* yr = y + static_cast<std::int64_t>(o0 + r) * pcols + p0;
    for (int j = 0; j < kPwTileP; ++j) yr[j] = acc[r][j];
  }
}

template <typename T>
void pw_edge(const T* x, const T* w, const T* b, T* y, int in_ch,
             std::int64_t pcols, int o0, int orows, std::int64_t p0,
             std::int64_t pn) {
  for (int r = 0; r < orows; ++r) {
    const int o = o0 + r;
    const T* wrow = w + static_cast<std::int64_t>(o) * in_ch;
    T* yr = y + static_cast<std::int64_t>(o) * pcols;
    for (std::int64_t p = p0; p < p0 + pn; ++p) {
      T acc = b ? b[o] : T(0);
      for (int i = 0; i < in_ch; ++i) acc += wrow[i] * x[i * pcols + p];
      yr[p] = acc;
    }
  }
}

// y (out_ch x P) = w (out_ch x in_ch) * x (in_ch x P) + b, one sample.
template <typename T>
void pw_matmul(const T* x, const T* w, const T* b, T* y, int in_ch, int out_ch,
               std::int64_t pcols) {
  const int o_full = out_ch & ~3;
  const std::int64_t p_full = pcols & ~static_cast<std::int64_t>(kPwTileP - 1);
  for (int o0 = 0; o0 < o_full; o0 += 4) {
    for (std::int64_t p0 = 0; p0 < p_full; p0 += kPwTileP)
      pw_tile_full(x, w, b, y, in_ch, pcols, o0, p0);
    if (p_full < pcols) pw_edge(x, w, b, y, in_ch, pcols, o0, 4, p_full, pcols - p_full);
  }
  if (o_full < out_ch)
    pw_edge(x, w, b, y, in_ch, pcols, o_full, out_ch - o_full, 0, pcols);
}

// Lane-array dot product: deterministic explicit reassociation that the
// vectorizer can use without -ffast-math. The lane schedule depends only on
// n, so results are reproducible. An 8-lane mid block keeps short rows (the
// 15-wide training patches) off the scalar tail.
template <typename T>
T dot_lanes(const T* __restrict a, const T* __restrict b, std::int64_t n) {
  T lanes[16] = {};
  std::int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    for (int j = 0; j < 16; ++j) lanes[j] += a[i + j] * b[i + j];
  }
  T mid[8] = {};
  if (i + 8 <= n) {
    for (int j = 0; j < 8; ++j) mid[j] = a[i + j] * b[i + j];
    i += 8;
  }
  T quad[4] = {};
  if (i + 4 <= n) {
    for (int j = 0; j < 4; ++j) quad[j] = a[i + j] * b[i + j];
    i += 4;
  }
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  T s01 = lanes[0] + lanes[1], s23 = lanes[2] + lanes[3];
  T s45 = lanes[4] + lanes[5], s67 = lanes[6] + lanes[7];
  T s89 = lanes[8] + lanes[9], sab = lanes[10] + lanes[11];
  T scd = lanes[12] + lanes[13], sef = lanes[14] + lanes[15];
  T m01 = mid[0] + mid[1], m23 = mid[2] + mid[3];
  T m45 = mid[4] + mid[5], m67 = mid[6] + mid[7];
  return ((s01 + s23) + (s45 + s67)) + ((s89 + sab) + (scd + sef)) +
         ((m01 + m23) + (m45 + m67)) + ((quad[0] + quad[1]) + (quad[2] + quad[3])) +
         tail;
}

// Four dot products against a shared left-hand row, each with exactly the
// same lane schedule as dot_lanes. Halves memory traffic on the weight-
// gradient reduction, where one dy row meets many x rows.
template <typename T>
void dot_lanes_x4(const T* __restrict a, const T* __restrict b0,
                  const T* __restrict b1, const T* __restrict b2,
                  const T* __restrict b3, std::int64_t n, T* __restrict out) {
  T lanes[4][16] = {};
  std::int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    for (int j = 0; j < 16; ++j) {
      const T av = a[i + j];
      lanes[0][j] += av * b0[i + j];
      lanes[1][j] += av * b1[i + j];
      lanes[2][j] += av * b2[i + j];
      lanes[3][j] += av * b3[i + j];
    }
  }
  T mid[4][8] = {};
  if (i + 8 <= n) {
    for (int j = 0; j < 8; ++j) {
      const T av = a[i + j];
      mid[0][j] = av * b0[i + j];
      mid[1][j] = av * b1[i + j];
      mid[2][j] = av * b2[i + j];
      mid[3][j] = av * b3[i + j];
    }
    i += 8;
  }
  T tail[4] = {};
  for (; i < n; ++i) {
    const T av = a[i];
    tail[0] += av * b0[i];
    tail[1] += av * b1[i];
    tail[2] += av * b2[i];
    tail[3] += av * b3[i];
  }
  for (int r = 0; r < 4; ++r) {
    const T* l = lanes[r];
    const T* m = mid[r];
    T s01 = l[0] + l[1], s23 = l[2] + l[3];
    T s45 = l[4] + l[5], s67 = l[6] + l[7];
    T s89 = l[8] + l[9], sab = l[10] + l[11];
    T scd = l[12] + l[13], sef = l[14] + l[15];
    T m01 = m[0] + m[1], m23 = m[2] + m[3];
    T m45 = m[4] + m[5], m67 = m[6] + m[7];
    out[r] = ((s01 + s23) + (s45 + s67)) + ((s89 + sab) + (scd + sef)) +
             ((m01 + m23) + (m45 + m67)) + tail[r];
  }
}

template <typename T>
T sum_lanes(const T* __restrict a, std::int64_t n) {
  T lanes[16] = {};
  std::int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    for (int j = 0; j < 16; ++j) lanes[j] += a[i + j];
  }
  T tail = T(0);
  for (; i < n; ++i) tail += a[i];
  T s01 = lanes[0] + lanes[1], s23 = lanes[2] + lanes[3];
  T s45 = lanes[4] + lanes[5], s67 = lanes[6] + lanes[7];
  T s89 = lanes[8] + lanes[9], sab = lanes[10] + lanes[11];
  T scd = lanes[12] + lanes[13], sef = lanes[14] + lanes[15];
  return ((s01 + s23) + (s45 + s67)) + ((s89 + sab) + (scd + sef)) + tail;
}

}  // namespace detail

// ---- pointwise (1x1) convolution -----------------------------------------

// x (N, I, H, W), w (O, I, 1, 1), optional bias (O, 1, 1, 1) -> y (N, O, H, W)
template <typename T>
Tensor4<T> conv_pointwise(const Tensor4<T>& x, const Tensor4<T>& w,
                          const Tensor4<T>* bias) {
  require_shape(w.h == 1 && w.w == 1, "pointwise weights must be (O,I,1,1), got " + w.shape_str());
  require_shape(w.c == x.c, "pointwise weights expect " + std::to_string(w.c) +
                                " input channels, tensor has " + std::to_string(x.c));
  if (bias)
    require_shape(bias->n == w.n && bias->c == 1 && bias->h == 1 && bias->w == 1,
                  "pointwise bias must be (O,1,1,1)");
  Tensor4<T> y(x.n, w.n, x.h, x.w);
  const std::int64_t pcols = x.plane();
  const T* bptr = bias ? bias->data() : nullptr;
  for (int in = 0; in < x.n; ++in) {
    const T* xs = x.chan(in, 0);
    T* ys = y.chan(in, 0);
    const int out_ch = w.n;
    parallel_for(out_ch, [&](std::int64_t o_begin, std::int64_t o_end) {
      // Partition over output channels: each lane owns whole rows of y.
      const int ob = static_cast<int>(o_begin);
      const int oe = static_cast<int>(o_end);
      const T* wsub = w.data() + static_cast<std::int64_t>(ob) * x.c;
      detail::pw_matmul(xs, wsub, bptr ? bptr + ob : nullptr,
                        ys + static_cast<std::int64_t>(ob) * pcols, x.c,
                        oe - ob, pcols);
    });
  }
  return y;
}

// Gradients of conv_pointwise. dy (N, O, H, W). Outputs are accumulated into
// zero-initialised tensors shaped like their primals.
template <typename T>
void conv_pointwise_backward(const Tensor4<T>& x, const Tensor4<T>& w,
                             const Tensor4<T>& dy, Tensor4<T>* dx,
                             Tensor4<T>* dw, Tensor4<T>* db) {
  require_shape(dy.n == x.n && dy.h == x.h && dy.w == x.w && dy.c == w.n,
                "pointwise backward: dy shape " + dy.shape_str() + " mismatch");
  const std::int64_t pcols = x.plane();
  const int in_ch = x.c, out_ch = w.n;

  if (dx) {
    *dx = Tensor4<T>::like(x);
    // dx[i, p] = sum_o w[o, i] * dy[o, p]; materialise w^T once so the same
    // forward micro-kernel applies.
    std::vector<T> wt(static_cast<std::size_t>(in_ch) * out_ch);
    for (int o = 0; o < out_ch; ++o)
      for (int i = 0; i < in_ch; ++i)
        wt[static_cast<std::size_t>(i) * out_ch + o] =
            w.v[static_cast<std::size_t>(o) * in_ch + i];
    for (int in = 0; in < x.n; ++in) {
      const T* dys = dy.chan(in, 0);
      T* dxs = dx->chan(in, 0);
      parallel_for(in_ch, [&](std::int64_t i_begin, std::int64_t i_end) {
        const int ib = static_cast<int>(i_begin);
        detail::pw_matmul(dys, wt.data() + static_cast<std::int64_t>(ib) * out_ch,
                          static_cast<const T*>(nullptr),
                          dxs + static_cast<std::int64_t>(ib) * pcols, out_ch,
                          static_cast<int>(i_end - i_begin), pcols);
      });
    }
  }
  if (dw) {
    *dw = Tensor4<T>::like(w);
    // dw[o, i] = sum_{n, p} dy[o, p] * x[i, p]
    parallel_for(out_ch, [&](std::int64_t o_begin, std::int64_t o_end) {
      for (int o = static_cast<int>(o_begin); o < o_end; ++o) {
        T* dwrow = dw->data() + static_cast<std::int64_t>(o) * in_ch;
        for (int in = 0; in < x.n; ++in) {
          const T* dyrow = dy.chan(in, o);
          const T* xs = x.chan(in, 0);
          int i = 0;
          for (; i + 4 <= in_ch; i += 4) {
            T quad[4];
            detail::dot_lanes_x4(dyrow, xs + static_cast<std::int64_t>(i) * pcols,
                                 xs + static_cast<std::int64_t>(i + 1) * pcols,
                                 xs + static_cast<std::int64_t>(i + 2) * pcols,
                                 xs + static_cast<std::int64_t>(i + 3) * pcols,
                                 pcols, quad);
            for (int r = 0; r < 4; ++r) dwrow[i + r] += quad[r];
          }
          for (; i < in_ch; ++i)
            dwrow[i] += detail::dot_lanes(dyrow, x.chan(in, i), pcols);
        }
      }
    });
  }
  if (db) {
    *db = Tensor4<T>(out_ch, 1, 1, 1);
    parallel_for(out_ch, [&](std::int64_t o_begin, std::int64_t o_end) {
      for (int o = static_cast<int>(o_begin); o < o_end; ++o) {
        T acc = T(0);
        for (int in = 0; in < x.n; ++in)
          acc += detail::sum_lanes(dy.chan(in, o), pcols);
        db->v[static_cast<std::size_t>(o)] = acc;
      }
    });
  }
}

// ---- depthwise (k x k, k odd) convolution ---------------------------------

namespace detail {

// Correlation of one plane with one k x k kernel, zero padding, same size.
template <typename T, int K>
void dw_plane(const T* __restrict src, const T* __restrict k, T* __restrict dst,
              int h, int w) {
  constexpr int R = K / 2;
  // Bounds-checked single-pixel path for pixels near any border.
  const auto edge = [&](int y, int x) {
    T acc = T(0);
    for (int dy = -R; dy <= R; ++dy) {
      const int sy = y + dy;
      if (sy < 0 || sy >= h) continue;
      for (int dx = -R; dx <= R; ++dx) {
        const int sx = x + dx;
        if (sx < 0 || sx >= w) continue;
        acc += k[(dy + R) * K + (dx + R)] * src[sy * w + sx];
      }
    }
    dst[static_cast<std::int64_t>(y) * w + x] = acc;
  };
  for (int y = 0; y < h; ++y) {
    const bool y_interior = (y >= R && y + R < h);
    if (!y_interior || w <= 2 * R) {
      for (int x = 0; x < w; ++x) edge(y, x);
      continue;
    }
    for (int x = 0; x < R; ++x) edge(y, x);
    // Interior columns: all K*K taps in one pass (no accumulation across
    // iterations), so the compiler vectorizes straight over x.
    const T* rows[K];
    for (int dy = 0; dy < K; ++dy)
      rows[dy] = src + static_cast<std::int64_t>(y - R + dy) * w;
    T* __restrict drow = dst + static_cast<std::int64_t>(y) * w;
    for (int x = R; x + R < w; ++x) {
      T acc = T(0);
      for (int dy = 0; dy < K; ++dy)
        for (int dx = 0; dx < K; ++dx)
          acc += k[dy * K + dx] * rows[dy][x + dx - R];
      drow[x] = acc;
    }
    for (int x = std::max(R, w - R); x < w; ++x) edge(y, x);
  }
}

}  // namespace detail

// x (N, C, H, W), w (C, 1, k, k) with k odd -> y (N, C, H, W); per-channel
// spatial correlation, zero padded, no bias.
template <typename T>
Tensor4<T> conv_depthwise(const Tensor4<T>& x, const Tensor4<T>& w) {
  require_shape(w.c == 1 && (w.h == 1 || w.h == 3 || w.h == 5) && w.h == w.w,
                "depthwise weights must be (C,1,k,k) with k in {1,3,5}, got " + w.shape_str());
  require_shape(w.n == x.c, "depthwise weights expect " + std::to_string(w.n) +
                                " channels, tensor has " + std::to_string(x.c));
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  const int k = w.h;
  for (int in = 0; in < x.n; ++in) {
    parallel_for(x.c, [&](std::int64_t c_begin, std::int64_t c_end) {
      for (int c = static_cast<int>(c_begin); c < c_end; ++c) {
        const T* kc = w.data() + static_cast<std::int64_t>(c) * k * k;
        if (k == 3) {
          detail::dw_plane<T, 3>(x.chan(in, c), kc, y.chan(in, c), x.h, x.w);
        } else if (k == 1) {
          const T k0 = kc[0];
          const T* s = x.chan(in, c);
          T* d = y.chan(in, c);
          for (std::int64_t p = 0; p < x.plane(); ++p) d[p] = k0 * s[p];
        } else {
          detail::dw_plane<T, 5>(x.chan(in, c), kc, y.chan(in, c), x.h, x.w);
        }
      }
    });
  }
  return y;
}

template <typename T>
void conv_depthwise_backward(const Tensor4<T>& x, const Tensor4<T>& w,
                             const Tensor4<T>& dy, Tensor4<T>* dx,
                             Tensor4<T>* dw) {
  require_shape(dy.same_shape(x), "depthwise backward: dy shape mismatch");
  const int k = w.h;
  const int r = k / 2;
  if (dx) {
    // dx = dy correlated with the 180-degree-rotated kernel.
    Tensor4<T> wf = Tensor4<T>::like(w);
    for (int c = 0; c < w.n; ++c) {
      const T* src = w.data() + static_cast<std::int64_t>(c) * k * k;
      T* dst = wf.data() + static_cast<std::int64_t>(c) * k * k;
      for (int i = 0; i < k * k; ++i) dst[i] = src[k * k - 1 - i];
    }
    *dx = conv_depthwise(dy, wf);
  }
  if (dw) {
    *dw = Tensor4<T>::like(w);
    parallel_for(x.c, [&](std::int64_t c_begin, std::int64_t c_end) {
      for (int c = static_cast<int>(c_begin); c < c_end; ++c) {
        T* dkc = dw->data() + static_cast<std::int64_t>(c) * k * k;
        for (int in = 0; in < x.n; ++in) {
          const T* xs = x.chan(in, c);
          const T* dys = dy.chan(in, c);
          for (int dyk = -r; dyk <= r; ++dyk) {
            for (int dxk = -r; dxk <= r; ++dxk) {
              // dw[c, dy, dx] = sum_{y, x} dy[y, x] * src[y + dy, x + dx]
              T lanesum = T(0);
              for (int y = 0; y < x.h; ++y) {
                const int sy = y + dyk;
                if (sy < 0 || sy >= x.h) continue;
                const int x0 = std::max(0, -dxk);
                const int x1 = std::min(x.w, x.w - dxk);
                if (x1 <= x0) continue;
                lanesum += detail::dot_lanes(dys + static_cast<std::int64_t>(y) * x.w + x0,
                                             xs + static_cast<std::int64_t>(sy) * x.w + x0 + dxk,
                                             x1 - x0);
              }
              dkc[(dyk + r) * k + (dxk + r)] += lanesum;
            }
          }
        }
      }
    });
  }
}

// ---- ReLU -----------------------------------------------------------------

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y = Tensor4<T>::like(x);
  const std::int64_t n = x.size();
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    const T* xs = x.data();
    T* ys = y.data();
    for (std::int64_t i = b; i < e; ++i) ys[i] = xs[i] > T(0) ? xs[i] : T(0);
  });
  return y;
}

// dx = dy where the forward input was strictly positive, else 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
  require_shape(dy.same_shape(x), "relu backward: dy shape mismatch");
  Tensor4<T> dx = Tensor4<T>::like(x);
  const std::int64_t n = x.size();
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    const T* xs = x.data();
    const T* ds = dy.data();
    T* o = dx.data();
    for (std::int64_t i = b; i < e; ++i) o[i] = xs[i] > T(0) ? ds[i] : T(0);
  });
  return dx;
}

// ---- residual add ----------------------------------------------------------

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_shape(a.same_shape(b), "residual add: shape mismatch " + a.shape_str() +
                                     " vs " + b.shape_str());
  Tensor4<T> y = Tensor4<T>::like(a);
  const std::int64_t n = a.size();
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    const T* as = a.data();
    const T* bs = b.data();
    T* ys = y.data();
    for (std::int64_t i = lo; i < hi; ++i) ys[i] = as[i] + bs[i];
  });
  return y;
}

// ---- batch normalization ----------------------------------------------------

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.99;

// Per-channel running statistics, updated only in training mode:
// running = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BatchNormState {
  Tensor4<T> running_mean;  // (C,1,1,1)
  Tensor4<T> running_var;   // (C,1,1,1)
};

// Saved by the training-mode forward pass for the backward pass.
template <typename T>
struct BatchNormCache {
  Tensor4<T> xhat;              // normalised activations
  std::vector<double> inv_std;  // per channel, 1/sqrt(var + eps)
};

// Training mode normalises with batch statistics over (N, H, W) per channel
// (population variance) and updates the running stats; inference mode uses
// the running stats and leaves them untouched.
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, const Tensor4<T>& gamma,
                             const Tensor4<T>& beta, BatchNormState<T>& state,
                             bool training, BatchNormCache<T>* cache = nullptr,
                             double eps = kBnEpsilon,
                             double momentum = kBnMomentum) {
  require_shape(gamma.n == x.c && gamma.c == 1 && gamma.h == 1 && gamma.w == 1,
                "batchnorm gamma must be (C,1,1,1)");
  require_shape(beta.n == x.c && beta.c == 1 && beta.h == 1 && beta.w == 1,
                "batchnorm beta must be (C,1,1,1)");
  require_shape(state.running_mean.n == x.c && state.running_var.n == x.c,
                "batchnorm running stats channel mismatch");
  const std::int64_t m = static_cast<std::int64_t>(x.n) * x.plane();
  if (training && m < 2)
    throw data_error("batchnorm: training requires at least 2 values per channel");

  Tensor4<T> y = Tensor4<T>::like(x);
  if (cache) {
    cache->xhat = Tensor4<T>::like(x);
    cache->inv_std.assign(static_cast<std::size_t>(x.c), 0.0);
  }
  const std::int64_t pcols = x.plane();
  parallel_for(x.c, [&](std::int64_t c_begin, std::int64_t c_end) {
    for (int c = static_cast<int>(c_begin); c < c_end; ++c) {
      double mean, var;
      if (training) {
        double s = 0.0, s2 = 0.0;
        for (int in = 0; in < x.n; ++in) {
          const T* p = x.chan(in, c);
          for (std::int64_t i = 0; i < pcols; ++i) {
            const double v = static_cast<double>(p[i]);
            s += v;
            s2 += v * v;
          }
        }
        mean = s / static_cast<double>(m);
        var = s2 / static_cast<double>(m) - mean * mean;
        if (var < 0.0) var = 0.0;
        state.running_mean.v[static_cast<std::size_t>(c)] = static_cast<T>(
            momentum * static_cast<double>(state.running_mean.v[static_cast<std::size_t>(c)]) +
            (1.0 - momentum) * mean);
        state.running_var.v[static_cast<std::size_t>(c)] = static_cast<T>(
            momentum * static_cast<double>(state.running_var.v[static_cast<std::size_t>(c)]) +
            (1.0 - momentum) * var);
      } else {
        mean = static_cast<double>(state.running_mean.v[static_cast<std::size_t>(c)]);
        var = static_cast<double>(state.running_var.v[static_cast<std::size_t>(c)]);
      }
      const double inv = 1.0 / std::sqrt(var + eps);
      if (cache) cache->inv_std[static_cast<std::size_t>(c)] = inv;
      const T mean_t = static_cast<T>(mean);
      const T inv_t = static_cast<T>(inv);
      const T g = gamma.v[static_cast<std::size_t>(c)];
      const T bta = beta.v[static_cast<std::size_t>(c)];
      for (int in = 0; in < x.n; ++in) {
        const T* __restrict p = x.chan(in, c);
        T* __restrict q = y.chan(in, c);
        if (cache) {
          T* __restrict xh = cache->xhat.chan(in, c);
          for (std::int64_t i = 0; i < pcols; ++i) {
            const T xhat = (p[i] - mean_t) * inv_t;
            xh[i] = xhat;
            q[i] = g * xhat + bta;
          }
        } else {
          for (std::int64_t i = 0; i < pcols; ++i)
            q[i] = g * (p[i] - mean_t) * inv_t + bta;
        }
      }
    }
  });
  return y;
}

// Backward for the training-mode forward (batch statistics):
// dx = gamma * inv * (dy - mean(dy) - xhat * mean(dy * xhat)).
template <typename T>
void batchnorm_backward(const BatchNormCache<T>& cache, const Tensor4<T>& gamma,
                        const Tensor4<T>& dy, Tensor4<T>* dx, Tensor4<T>* dgamma,
                        Tensor4<T>* dbeta) {
  const Tensor4<T>& xhat = cache.xhat;
  require_shape(dy.same_shape(xhat), "batchnorm backward: dy shape mismatch");
  const std::int64_t pcols = xhat.plane();
  const double m = static_cast<double>(static_cast<std::int64_t>(xhat.n) * pcols);
  if (dx) *dx = Tensor4<T>::like(xhat);
  if (dgamma) *dgamma = Tensor4<T>(xhat.c, 1, 1, 1);
  if (dbeta) *dbeta = Tensor4<T>(xhat.c, 1, 1, 1);
  parallel_for(xhat.c, [&](std::int64_t c_begin, std::int64_t c_end) {
    for (int c = static_cast<int>(c_begin); c < c_end; ++c) {
      double s_dy = 0.0, s_dyx = 0.0;
      for (int in = 0; in < xhat.n; ++in) {
        const T* d = dy.chan(in, c);
        const T* xh = xhat.chan(in, c);
        for (std::int64_t i = 0; i < pcols; ++i) {
          s_dy += static_cast<double>(d[i]);
          s_dyx += static_cast<double>(d[i]) * static_cast<double>(xh[i]);
        }
      }
      if (dgamma) dgamma->v[static_cast<std::size_t>(c)] = static_cast<T>(s_dyx);
      if (dbeta) dbeta->v[static_cast<std::size_t>(c)] = static_cast<T>(s_dy);
      if (dx) {
        const double g = static_cast<double>(gamma.v[static_cast<std::size_t>(c)]);
        const double inv = cache.inv_std[static_cast<std::size_t>(c)];
        const T g_inv = static_cast<T>(g * inv);
        const T mean_dy = static_cast<T>(s_dy / m);
        const T mean_dyx = static_cast<T>(s_dyx / m);
        for (int in = 0; in < xhat.n; ++in) {
          const T* __restrict d = dy.chan(in, c);
          const T* __restrict xh = xhat.chan(in, c);
          T* __restrict o = dx->chan(in, c);
          for (std::int64_t i = 0; i < pcols; ++i)
            o[i] = g_inv * (d[i] - mean_dy - xh[i] * mean_dyx);
        }
      }
    }
  });
}

}  // namespace canht::nn
