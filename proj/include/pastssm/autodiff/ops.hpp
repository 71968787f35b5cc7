// Copyright 2026 The pastssm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pastssm/autodiff/tensor.hpp"
#include "pastssm/numeric.hpp"

namespace pastssm::ad {

namespace detail {

inline void expect(bool ok, std::string_view op, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

template <typename T>
void expect_same(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  expect(a.shape() == b.shape(), op,
         "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
void expect_rank(std::string_view op, const Tensor<T>& a, std::size_t r) {
  expect(a.rank() == r, op, "expected rank " + std::to_string(r) + ", got " + to_string(a.shape()));
}

/// Elementwise unary op with derivative f'(x, y) evaluated from input and output.
template <typename T, typename F, typename DF>
Tensor<T> unary(std::string_view op, const Tensor<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  record<T>(op, out, {&x}, [x, out, df](std::span<const T> g) {
    std::vector<T> gx(g.size());
    const auto xi = x.data();
    const auto yo = out.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * df(xi[i], yo[i]);
    push_grad<T>(x, gx);
  });
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same("add", a, b);
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  detail::record<T>("add", out, {&a, &b}, [a, b](std::span<const T> g) {
    detail::push_grad<T>(a, g);
    detail::push_grad<T>(b, g);
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same("sub", a, b);
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
  detail::record<T>("sub", out, {&a, &b}, [a, b](std::span<const T> g) {
    detail::push_grad<T>(a, g);
    if (b.requires_grad()) {
      std::vector<T> gb(g.begin(), g.end());
      for (T& v : gb) v = -v;
      detail::push_grad<T>(b, gb);
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same("mul", a, b);
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  detail::record<T>("mul", out, {&a, &b}, [a, b](std::span<const T> g) {
    std::vector<T> tmp(g.size());
    if (a.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * b[i];
      detail::push_grad<T>(a, tmp);
    }
    if (b.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * a[i];
      detail::push_grad<T>(b, tmp);
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary<T>(
      "scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary<T>(
      "softplus", a, [](T x) { return static_cast<T>(pastssm::softplus(x)); },
      [](T x, T) { return static_cast<T>(pastssm::sigmoid(x)); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary<T>(
      "silu", a, [](T x) { return static_cast<T>(x * pastssm::sigmoid(x)); },
      [](T x, T) {
        const double s = pastssm::sigmoid(x);
        return static_cast<T>(s * (1.0 + x * (1.0 - s)));
      });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  return detail::unary<T>(
      "gelu", a,
      [](T x) { return static_cast<T>(0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2))); },
      [](T x, T) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * double(x) * x) / std::sqrt(2.0 * std::numbers::pi);
        return static_cast<T>(cdf + x * pdf);
      });
}

/// Clamps to [lo, hi]; the gradient is passed only where the input lies
/// inside the interval.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::expect(numel(shape) == a.size(), "reshape",
                 to_string(a.shape()) + " -> " + to_string(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  detail::record<T>("reshape", out, {&a}, [a](std::span<const T> g) { detail::push_grad<T>(a, g); });
  return out;
}

/// Sum of all elements (compensated), shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(compensated_sum<T>(a.data()));
  detail::record<T>("sum", out, {&a}, [a](std::span<const T> g) {
    detail::push_grad<T>(a, std::vector<T>(a.size(), g[0]));
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// ---------------------------------------------------------------------------
// Matrix ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_rank("matmul", a, 2);
  detail::expect_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::expect(b.dim(0) == k, "matmul", to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor<T> out({m, n});
  auto o = out.mutable_data();
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = &o[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T(0)) continue;
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  detail::record<T>("matmul", out, {&a, &b}, [a, b, m, k, n](std::span<const T> g) {
    const T* A = a.data().data();
    const T* B = b.data().data();
    if (a.requires_grad()) {
      std::vector<T> ga(m * k, T(0));
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = B + p * n;
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] = acc;
        }
      }
      detail::push_grad<T>(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<T> gb(k * n, T(0));
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A[i * k + p];
          if (av == T(0)) continue;
          T* dst = &gb[p * n];
          for (std::size_t j = 0; j < n; ++j) dst[j] += av * grow[j];
        }
      }
      detail::push_grad<T>(b, gb);
    }
  });
  return out;
}

/// Selection contraction out[k] = sum_p mask[k, p] * frames[p], with frames
/// flattened to rows. Mathematically a matmul; kept separate so the tape
/// names it.
template <typename T>
Tensor<T> gather_contract(const Tensor<T>& mask, const Tensor<T>& frames) {
  detail::expect_rank("gather_contract", mask, 2);
  detail::expect_rank("gather_contract", frames, 2);
  detail::expect(mask.dim(1) == frames.dim(0), "gather_contract",
                 "mask " + to_string(mask.shape()) + " vs frames " + to_string(frames.shape()));
  return matmul(mask, frames);
}

/// x[r, c] + bias[c]
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::expect_rank("add_row_bias", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  detail::expect(bias.size() == c, "add_row_bias", "bias length " + std::to_string(bias.size()));
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] = x[i * c + j] + bias[j];
  detail::record<T>("add_row_bias", out, {&x, &bias}, [x, bias, r, c](std::span<const T> g) {
    detail::push_grad<T>(x, g);
    if (bias.requires_grad()) {
      std::vector<T> gb(c, T(0));
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      detail::push_grad<T>(bias, gb);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  detail::expect_rank("softmax", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = &x.data()[i * c];
    const T mx = *std::max_element(xi, xi + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (o[i * c + j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] /= z;
  }
  detail::record<T>("softmax", out, {&x}, [x, out, r, c](std::span<const T> g) {
    std::vector<T> gx(r * c);
    const auto s = out.data();
    for (std::size_t i = 0; i < r; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * s[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = s[i * c + j] * (g[i * c + j] - dot);
    }
    detail::push_grad<T>(x, gx);
  });
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  detail::expect_rank("log_softmax", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = &x.data()[i * c];
    const T mx = *std::max_element(xi, xi + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xi[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] = xi[j] - lz;
  }
  detail::record<T>("log_softmax", out, {&x}, [x, out, r, c](std::span<const T> g) {
    std::vector<T> gx(r * c);
    const auto l = out.data();
    for (std::size_t i = 0; i < r; ++i) {
      T total = 0;
      for (std::size_t j = 0; j < c; ++j) total += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[i * c + j] - std::exp(l[i * c + j]) * total;
    }
    detail::push_grad<T>(x, gx);
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  detail::expect_rank("layer_norm", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  detail::expect(gamma.size() == c && beta.size() == c, "layer_norm", "affine size mismatch");
  Tensor<T> out(x.shape());
  std::vector<T> xhat(r * c), inv_std(r);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = &x.data()[i * c];
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xi[j] - mu) * inv_std[i];
      o[i * c + j] = gamma[j] * xhat[i * c + j] + beta[j];
    }
  }
  detail::record<T>("layer_norm", out, {&x, &gamma, &beta},
                    [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), r,
                     c](std::span<const T> g) {
                      std::vector<T> gg(c, T(0)), gbeta(c, T(0)), gx(r * c);
                      for (std::size_t i = 0; i < r; ++i) {
                        T m1 = 0, m2 = 0;
                        for (std::size_t j = 0; j < c; ++j) {
                          const T d = g[i * c + j] * gamma[j];
                          m1 += d;
                          m2 += d * xhat[i * c + j];
                          gg[j] += g[i * c + j] * xhat[i * c + j];
                          gbeta[j] += g[i * c + j];
                        }
                        m1 /= static_cast<T>(c);
                        m2 /= static_cast<T>(c);
                        for (std::size_t j = 0; j < c; ++j) {
                          const T d = g[i * c + j] * gamma[j];
                          gx[i * c + j] = inv_std[i] * (d - m1 - xhat[i * c + j] * m2);
                        }
                      }
                      detail::push_grad<T>(x, gx);
                      detail::push_grad<T>(gamma, gg);
                      detail::push_grad<T>(beta, gbeta);
                    });
  return out;
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gamma, T eps = T(1e-5)) {
  detail::expect_rank("rms_norm", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  detail::expect(gamma.size() == c, "rms_norm", "weight size mismatch");
  Tensor<T> out(x.shape());
  std::vector<T> inv_rms(r);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = &x.data()[i * c];
    T ms = 0;
    for (std::size_t j = 0; j < c; ++j) ms += xi[j] * xi[j];
    inv_rms[i] = T(1) / std::sqrt(ms / static_cast<T>(c) + eps);
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] = gamma[j] * xi[j] * inv_rms[i];
  }
  detail::record<T>("rms_norm", out, {&x, &gamma},
                    [x, gamma, inv_rms = std::move(inv_rms), r, c](std::span<const T> g) {
                      std::vector<T> gg(c, T(0)), gx(r * c);
                      for (std::size_t i = 0; i < r; ++i) {
                        const T* xi = &x.data()[i * c];
                        const T s = inv_rms[i];
                        T dot = 0;
                        for (std::size_t j = 0; j < c; ++j) {
                          dot += g[i * c + j] * gamma[j] * xi[j];
                          gg[j] += g[i * c + j] * xi[j] * s;
                        }
                        const T k = dot * s * s * s / static_cast<T>(c);
                        for (std::size_t j = 0; j < c; ++j) {
                          gx[i * c + j] = g[i * c + j] * gamma[j] * s - xi[j] * k;
                        }
                      }
                      detail::push_grad<T>(x, gx);
                      detail::push_grad<T>(gamma, gg);
                    });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions

struct Conv3dSpec {
  std::array<std::size_t, 3> stride{1, 1, 1};   // time, rows, cols
  std::array<std::size_t, 3> padding{0, 0, 0};  // time, rows, cols
  /// Time padding repeats the edge frame instead of inserting zeros.
  bool replicate_time = false;
};

/// Direct 3-D convolution. x: [Cin, T, H, W], w: [Cout, Cin, kt, kh, kw],
/// b: [Cout] -> [Cout, T', H', W']. Spatial padding is zero padding.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv3dSpec spec) {
  detail::expect_rank("conv3d", x, 4);
  detail::expect_rank("conv3d", w, 5);
  const std::size_t ci = x.dim(0), tn = x.dim(1), hn = x.dim(2), wn = x.dim(3);
  const std::size_t co = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  detail::expect(w.dim(1) == ci, "conv3d", "input channels " + to_string(x.shape()) + " vs " +
                                               to_string(w.shape()));
  detail::expect(b.size() == co, "conv3d", "bias length mismatch");
  const auto [st, sh, sw] = spec.stride;
  const auto [pt, ph, pw] = spec.padding;
  detail::expect(tn + 2 * pt >= kt && hn + 2 * ph >= kh && wn + 2 * pw >= kw, "conv3d",
                 "kernel larger than padded input");
  const std::size_t to = (tn + 2 * pt - kt) / st + 1;
  const std::size_t ho = (hn + 2 * ph - kh) / sh + 1;
  const std::size_t wo = (wn + 2 * pw - kw) / sw + 1;
  const bool replicate = spec.replicate_time;

  // Visits every (output, weight, input) triple that contributes.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t ot = 0; ot < to; ++ot)
        for (std::size_t oh = 0; oh < ho; ++oh)
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::size_t oi = ((oc * to + ot) * ho + oh) * wo + ow;
            for (std::size_t ic = 0; ic < ci; ++ic)
              for (std::size_t dt = 0; dt < kt; ++dt) {
                std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot * st + dt) -
                                    static_cast<std::ptrdiff_t>(pt);
                if (replicate) {
                  it = std::clamp<std::ptrdiff_t>(it, 0, static_cast<std::ptrdiff_t>(tn) - 1);
                } else if (it < 0 || it >= static_cast<std::ptrdiff_t>(tn)) {
                  continue;
                }
                for (std::size_t dh = 0; dh < kh; ++dh) {
                  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * sh + dh) -
                                            static_cast<std::ptrdiff_t>(ph);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(hn)) continue;
                  const std::size_t xrow = ((ic * tn + it) * hn + ih) * wn;
                  const std::size_t wrow = (((oc * ci + ic) * kt + dt) * kh + dh) * kw;
                  const std::ptrdiff_t iw0 = static_cast<std::ptrdiff_t>(ow * sw) -
                                             static_cast<std::ptrdiff_t>(pw);
                  const std::size_t d0 = iw0 < 0 ? static_cast<std::size_t>(-iw0) : 0;
                  const std::size_t d1 =
                      std::min<std::ptrdiff_t>(kw, static_cast<std::ptrdiff_t>(wn) - iw0);
                  for (std::size_t dw = d0; dw < d1; ++dw) {
                    fn(oi, wrow + dw, xrow + static_cast<std::size_t>(iw0 + static_cast<std::ptrdiff_t>(dw)));
                  }
                }
              }
          }
  };

  Tensor<T> out({co, to, ho, wo});
  auto o = out.mutable_data();
  const std::size_t plane = to * ho * wo;
  for (std::size_t oc = 0; oc < co; ++oc)
    std::fill(o.begin() + oc * plane, o.begin() + (oc + 1) * plane, b[oc]);
  {
    const T* X = x.data().data();
    const T* W = w.data().data();
    T* O = o.data();
    for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) { O[oi] += W[wi] * X[xi]; });
  }
  detail::record<T>("conv3d", out, {&x, &w, &b},
                    [x, w, b, for_each_tap, co, plane](std::span<const T> g) {
                      const T* X = x.data().data();
                      const T* W = w.data().data();
                      const bool need_x = x.requires_grad();
                      const bool need_w = w.requires_grad();
                      std::vector<T> gx(need_x ? x.size() : 0, T(0));
                      std::vector<T> gw(need_w ? w.size() : 0, T(0));
                      if (need_x || need_w) {
                        for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) {
                          const T go = g[oi];
                          if (need_w) gw[wi] += go * X[xi];
                          if (need_x) gx[xi] += go * W[wi];
                        });
                      }
                      if (need_x) detail::push_grad<T>(x, gx);
                      if (need_w) detail::push_grad<T>(w, gw);
                      if (b.requires_grad()) {
                        std::vector<T> gb(co, T(0));
                        for (std::size_t oc = 0; oc < co; ++oc)
                          for (std::size_t i = 0; i < plane; ++i) gb[oc] += g[oc * plane + i];
                        detail::push_grad<T>(b, gb);
                      }
                    });
  return out;
}

/// [C, T, H, W] -> [C, T], mean over the spatial plane.
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  detail::expect_rank("spatial_mean", x, 4);
  const std::size_t c = x.dim(0), t = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({c, t});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < c * t; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < hw; ++j) acc += x[i * hw + j];
    o[i] = acc / static_cast<T>(hw);
  }
  detail::record<T>("spatial_mean", out, {&x}, [x, c, t, hw](std::span<const T> g) {
    std::vector<T> gx(x.size());
    for (std::size_t i = 0; i < c * t; ++i)
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] = g[i] / static_cast<T>(hw);
    detail::push_grad<T>(x, gx);
  });
  return out;
}

/// Causal depthwise convolution along rows. x: [L, C], w: [C, k], b: [C];
/// y[t, c] = b[c] + sum_j w[c, j] * x[t - (k - 1) + j, c], zero before t = 0.
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::expect_rank("depthwise_conv1d", x, 2);
  detail::expect_rank("depthwise_conv1d", w, 2);
  const std::size_t l = x.dim(0), c = x.dim(1), k = w.dim(1);
  detail::expect(w.dim(0) == c && b.size() == c, "depthwise_conv1d",
                 to_string(x.shape()) + " vs " + to_string(w.shape()));
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = b[ch];
      for (std::size_t j = 0; j < k; ++j) {
        if (t + j + 1 < k) continue;
        acc += w[ch * k + j] * x[(t + j + 1 - k) * c + ch];
      }
      o[t * c + ch] = acc;
    }
  detail::record<T>("depthwise_conv1d", out, {&x, &w, &b}, [x, w, b, l, c, k](std::span<const T> g) {
    std::vector<T> gx(x.size(), T(0)), gw(w.size(), T(0)), gb(c, T(0));
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T go = g[t * c + ch];
        gb[ch] += go;
        for (std::size_t j = 0; j < k; ++j) {
          if (t + j + 1 < k) continue;
          const std::size_t xi = (t + j + 1 - k) * c + ch;
          gw[ch * k + j] += go * x[xi];
          gx[xi] += go * w[ch * k + j];
        }
      }
    detail::push_grad<T>(x, gx);
    detail::push_grad<T>(w, gw);
    detail::push_grad<T>(b, gb);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Row / layout manipulation

/// out[i] = x[index[i]] for rows; index -1 yields a zero row.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::ptrdiff_t> index) {
  detail::expect_rank("gather_rows", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  for (std::ptrdiff_t i : index) {
    detail::expect(i >= -1 && i < static_cast<std::ptrdiff_t>(r), "gather_rows",
                   "row index " + std::to_string(i) + " out of range");
  }
  Tensor<T> out({index.size(), c});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    std::copy_n(&x.data()[static_cast<std::size_t>(index[i]) * c], c, &o[i * c]);
  }
  detail::record<T>("gather_rows", out, {&x}, [x, index = std::move(index), c](std::span<const T> g) {
    std::vector<T> gx(x.size(), T(0));
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] < 0) continue;
      T* dst = &gx[static_cast<std::size_t>(index[i]) * c];
      for (std::size_t j = 0; j < c; ++j) dst[j] += g[i * c + j];
    }
    detail::push_grad<T>(x, gx);
  });
  return out;
}

/// Row permutation: out[i] = x[perm[i]].
template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  detail::expect(perm.size() == x.dim(0), "permute_rows", "permutation length mismatch");
  return gather_rows(x, std::vector<std::ptrdiff_t>(perm.begin(), perm.end()));
}

template <typename T>
Tensor<T> reverse_rows(const Tensor<T>& x) {
  detail::expect_rank("reverse_rows", x, 2);
  std::vector<std::ptrdiff_t> idx(x.dim(0));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::ptrdiff_t>(idx.size() - 1 - i);
  return gather_rows(x, std::move(idx));
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_rank("concat_rows", a, 2);
  detail::expect_rank("concat_rows", b, 2);
  detail::expect(a.dim(1) == b.dim(1), "concat_rows", to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<T> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1)}, std::move(v));
  const std::size_t na = a.size();
  detail::record<T>("concat_rows", out, {&a, &b}, [a, b, na](std::span<const T> g) {
    detail::push_grad<T>(a, g.subspan(0, na));
    detail::push_grad<T>(b, g.subspan(na));
  });
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
  detail::expect_rank("slice_rows", x, 2);
  detail::expect(r0 <= r1 && r1 <= x.dim(0), "slice_rows", "bad row range");
  const std::size_t c = x.dim(1);
  Tensor<T> out({r1 - r0, c}, std::vector<T>(x.data().begin() + r0 * c, x.data().begin() + r1 * c));
  detail::record<T>("slice_rows", out, {&x}, [x, r0, c](std::span<const T> g) {
    std::vector<T> gx(x.size(), T(0));
    std::copy(g.begin(), g.end(), gx.begin() + r0 * c);
    detail::push_grad<T>(x, gx);
  });
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  detail::expect_rank("slice_cols", x, 2);
  detail::expect(c0 <= c1 && c1 <= x.dim(1), "slice_cols", "bad column range");
  const std::size_t r = x.dim(0), c = x.dim(1), n = c1 - c0;
  Tensor<T> out({r, n});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(&x.data()[i * c + c0], n, &o[i * n]);
  detail::record<T>("slice_cols", out, {&x}, [x, r, c, c0, n](std::span<const T> g) {
    std::vector<T> gx(x.size(), T(0));
    for (std::size_t i = 0; i < r; ++i) std::copy_n(&g[i * n], n, &gx[i * c + c0]);
    detail::push_grad<T>(x, gx);
  });
  return out;
}

/// [P, H, W, C] -> [C, P, H, W]
template <typename T>
Tensor<T> channels_first(const Tensor<T>& x) {
  detail::expect_rank("channels_first", x, 4);
  const std::size_t p = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t plane = p * h * w;
  Tensor<T> out({c, p, h, w});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) o[ch * plane + i] = x[i * c + ch];
  detail::record<T>("channels_first", out, {&x}, [x, plane, c](std::span<const T> g) {
    std::vector<T> gx(x.size());
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) gx[i * c + ch] = g[ch * plane + i];
    detail::push_grad<T>(x, gx);
  });
  return out;
}

/// Cuts [K, H, W, C] frames into non-overlapping p x p patches:
/// -> [K * (H/p) * (W/p), p * p * C]. Tokens run frame-major, then patch
/// row, then patch column; features run (dy, dx, c).
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t p) {
  detail::expect_rank("patchify", x, 4);
  const std::size_t k = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  detail::expect(p > 0 && h % p == 0 && w % p == 0, "patchify",
                 "frame " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch " + std::to_string(p));
  const std::size_t gh = h / p, gw = w / p, feat = p * p * c;
  std::vector<std::size_t> src(k * gh * gw * feat);
  std::size_t n = 0;
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t pr = 0; pr < gh; ++pr)
      for (std::size_t pc = 0; pc < gw; ++pc)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t ch = 0; ch < c; ++ch)
              src[n++] = ((f * h + pr * p + dy) * w + pc * p + dx) * c + ch;
  Tensor<T> out({k * gh * gw, feat});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) o[i] = x[src[i]];
  detail::record<T>("patchify", out, {&x}, [x, src = std::move(src)](std::span<const T> g) {
    std::vector<T> gx(x.size(), T(0));
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] = g[i];
    detail::push_grad<T>(x, gx);
  });
  return out;
}

/// Luminance of [K, H, W, 3] frames -> [K, H*W].
template <typename T>
Tensor<T> gray(const Tensor<T>& x) {
  detail::expect(x.rank() == 4 && x.dim(3) == 3, "gray", "expected [K,H,W,3], got " + to_string(x.shape()));
  constexpr T kR = T(0.299), kG = T(0.587), kB = T(0.114);
  const std::size_t k = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out({k, hw});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < k * hw; ++i) o[i] = kR * x[3 * i] + kG * x[3 * i + 1] + kB * x[3 * i + 2];
  detail::record<T>("gray", out, {&x}, [x, k, hw](std::span<const T> g) {
    std::vector<T> gx(x.size());
    for (std::size_t i = 0; i < k * hw; ++i) {
      gx[3 * i] = kR * g[i];
      gx[3 * i + 1] = kG * g[i];
      gx[3 * i + 2] = kB * g[i];
    }
    detail::push_grad<T>(x, gx);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Losses and selection

/// -log softmax(logits)[label] for logits of shape [C] or [1, C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label) {
  const std::size_t c = logits.size();
  if (label >= c) {
    throw ArgumentError("cross_entropy: label " + std::to_string(label) + " outside " +
                        std::to_string(c) + " classes");
  }
  const auto z = logits.data();
  const T mx = *std::max_element(z.begin(), z.end());
  T s = 0;
  for (T v : z) s += std::exp(v - mx);
  const T lse = mx + std::log(s);
  Tensor<T> out = Tensor<T>::scalar(lse - z[label]);
  detail::record<T>("cross_entropy", out, {&logits}, [logits, label, lse, c](std::span<const T> g) {
    std::vector<T> gl(c);
    for (std::size_t j = 0; j < c; ++j) {
      gl[j] = g[0] * (std::exp(logits[j] - lse) - (j == label ? T(1) : T(0)));
    }
    detail::push_grad<T>(logits, gl);
  });
  return out;
}

/// Straight-through Gumbel-softmax on rows of `scores` with externally
/// supplied Gumbel noise. The forward value is the one-hot argmax of
/// (scores + noise); the backward pass uses the Jacobian of
/// softmax((scores + noise) / tau).
template <typename T>
Tensor<T> gumbel_softmax_st(const Tensor<T>& scores, std::span<const T> noise, T tau) {
  detail::expect_rank("gumbel_softmax_st", scores, 2);
  detail::expect(noise.size() == scores.size(), "gumbel_softmax_st", "noise size mismatch");
  if (!(tau > 0)) throw DomainError("gumbel_softmax_st: temperature must be positive");
  const std::size_t r = scores.dim(0), c = scores.dim(1);
  std::vector<T> soft(r * c);
  Tensor<T> out(scores.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      const T v = (scores[i * c + j] + noise[i * c + j]) / tau;
      soft[i * c + j] = v;
      if (v > mx) {
        mx = v;
        best = j;
      }
    }
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (soft[i * c + j] = std::exp(soft[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) soft[i * c + j] /= z;
    o[i * c + best] = T(1);
  }
  detail::record<T>("gumbel_softmax_st", out, {&scores},
                    [scores, soft = std::move(soft), r, c, tau](std::span<const T> g) {
                      std::vector<T> gs(r * c);
                      for (std::size_t i = 0; i < r; ++i) {
                        T dot = 0;
                        for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * soft[i * c + j];
                        for (std::size_t j = 0; j < c; ++j) {
                          gs[i * c + j] = soft[i * c + j] * (g[i * c + j] - dot) / tau;
                        }
                      }
                      detail::push_grad<T>(scores, gs);
                    });
  return out;
}

}  // namespace pastssm::ad
