// Copyright 2026 The InvSR-Desk Authors. All Rights Reserved.
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
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "invsr/error.hpp"
#include "invsr/nn/tape.hpp"
#include "invsr/tensor.hpp"

/// Differentiable tensor operations recorded on a Tape.
namespace invsr::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  std::size_t cin, h, w, k, stride, pad, ho, wo;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const long H = long(g.h), W = long(g.w), P = long(g.pad), S = long(g.stride);
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = long(oy) * S - P + long(ky);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = xc + iy * W;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = long(ox) * S - P + long(kx);
            dst[ox] = (ix < 0 || ix >= W) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const long H = long(g.h), W = long(g.w), P = long(g.pad), S = long(g.stride);
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* dxc = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = long(oy) * S - P + long(ky);
          if (iy < 0 || iy >= H) continue;
          const T* src = row + oy * g.wo;
          T* dst = dxc + iy * W;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = long(ox) * S - P + long(kx);
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T, class F, class DF>
Var unary(Tape<T>& tape, Var x, F f, DF df) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return tape.record(std::move(out), {x}, [x, df](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    const Tensor<T>& xv = tp.value(x);
    const Tensor<T>& yv = tp.value(Var{self});
    Tensor<T>& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

/// 2-D convolution, weight [Cout, Cin, k, k], optional bias [Cout].
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, const Var* b, std::size_t stride, std::size_t pad) {
  using namespace detail;
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require_rank4(xv.shape(), "conv2d input");
  require_rank4(wv.shape(), "conv2d weight");
  if (wv.dim(1) != xv.channels() || wv.dim(2) != wv.dim(3)) {
    throw DimensionError("conv2d: weight " + wv.shape().str() + " incompatible with input " + xv.shape().str());
  }
  const std::size_t k = wv.dim(2);
  if (xv.height() + 2 * pad < k || xv.width() + 2 * pad < k) throw DimensionError("conv2d: input smaller than kernel");
  ConvGeom g{xv.channels(), xv.height(), xv.width(), k, stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - k) / stride + 1;
  g.wo = (g.w + 2 * pad - k) / stride + 1;
  const std::size_t N = xv.batch(), Cout = wv.dim(0);
  Tensor<T> out(Shape{N, Cout, g.ho, g.wo});
  AlignedVector<T> col(g.pointwise() ? 0 : g.rows() * g.cols());
  ConstMatMap<T> W(wv.data(), long(Cout), long(g.rows()));
  const T* bias = b ? tape.value(*b).data() : nullptr;
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = xv.data() + n * g.cin * g.h * g.w;
    if (!g.pointwise()) im2col(xn, g, col.data());
    ConstMatMap<T> C(g.pointwise() ? xn : col.data(), long(g.rows()), long(g.cols()));
    MatMap<T> O(out.data() + n * Cout * g.cols(), long(Cout), long(g.cols()));
    O.noalias() = W * C;
    if (bias) O.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias, long(Cout));
  }
  const bool has_b = b != nullptr;
  const Var bvar = has_b ? *b : Var{};
  auto backward = [x, w, has_b, bvar, g, N, Cout](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& go = tp.grad_at(self);
    const Tensor<T>& xv = tp.value(x);
    const Tensor<T>& wv = tp.value(w);
    const bool gx_on = tp.requires_grad(x), gw_on = tp.requires_grad(w), gb_on = has_b && tp.requires_grad(bvar);
    AlignedVector<T> col(g.pointwise() ? 0 : g.rows() * g.cols());
    ConstMatMap<T> W(wv.data(), long(Cout), long(g.rows()));
    for (std::size_t n = 0; n < N; ++n) {
      ConstMatMap<T> G(go.data() + n * Cout * g.cols(), long(Cout), long(g.cols()));
      const T* xn = xv.data() + n * g.cin * g.h * g.w;
      if (gw_on) {
        if (!g.pointwise()) im2col(xn, g, col.data());
        ConstMatMap<T> C(g.pointwise() ? xn : col.data(), long(g.rows()), long(g.cols()));
        MatMap<T> GW(tp.grad(w).data(), long(Cout), long(g.rows()));
        GW.noalias() += G * C.transpose();
      }
      if (gb_on) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> GB(tp.grad(bvar).data(), long(Cout));
        GB += G.rowwise().sum();
      }
      if (gx_on) {
        T* dxn = tp.grad(x).data() + n * g.cin * g.h * g.w;
        if (g.pointwise()) {
          MatMap<T> DX(dxn, long(g.rows()), long(g.cols()));
          DX.noalias() += W.transpose() * G;
        } else {
          MatMap<T> DC(col.data(), long(g.rows()), long(g.cols()));
          DC.noalias() = W.transpose() * G;
          col2im_add(col.data(), g, dxn);
        }
      }
    }
  };
  return has_b ? tape.record(std::move(out), {x, w, bvar}, backward) : tape.record(std::move(out), {x, w}, backward);
}

/// Fully connected layer on x [N, in] with weight [out, in] and bias [out].
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  using namespace detail;
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  if (xv.rank() != 2 || wv.rank() != 2 || wv.dim(1) != xv.dim(1)) {
    throw DimensionError("linear: input " + xv.shape().str() + " weight " + wv.shape().str());
  }
  const std::size_t N = xv.dim(0), In = xv.dim(1), Out = wv.dim(0);
  Tensor<T> out(Shape{N, Out});
  ConstMatMap<T> X(xv.data(), long(N), long(In));
  ConstMatMap<T> W(wv.data(), long(Out), long(In));
  MatMap<T> Y(out.data(), long(N), long(Out));
  Y.noalias() = X * W.transpose();
  const auto& bv = tape.value(b);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Out; ++o) out[n * Out + o] += bv[o];
  return tape.record(std::move(out), {x, w, b}, [x, w, b, N, In, Out](Tape<T>& tp, std::size_t self) {
    ConstMatMap<T> G(tp.grad_at(self).data(), long(N), long(Out));
    if (tp.requires_grad(x)) {
      MatMap<T> GX(tp.grad(x).data(), long(N), long(In));
      GX.noalias() += G * ConstMatMap<T>(tp.value(w).data(), long(Out), long(In));
    }
    if (tp.requires_grad(w)) {
      MatMap<T> GW(tp.grad(w).data(), long(Out), long(In));
      GW.noalias() += G.transpose() * ConstMatMap<T>(tp.value(x).data(), long(N), long(In));
    }
    if (tp.requires_grad(b)) {
      T* gb = tp.grad(b).data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < Out; ++o) gb[o] += G(long(n), long(o));
    }
  });
}

/// Group normalization over (C/groups, H, W) with per-channel affine.
template <class T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, std::size_t groups, double eps = 1e-5) {
  const Tensor<T>& xv = tape.value(x);
  require_rank4(xv.shape(), "group_norm");
  const std::size_t N = xv.batch(), C = xv.channels(), HW = xv.height() * xv.width();
  if (groups == 0 || C % groups != 0) throw DimensionError("group_norm: channels not divisible by groups");
  const std::size_t cpg = C / groups, M = cpg * HW;
  const T* ga = tape.value(gamma).data();
  const T* be = tape.value(beta).data();
  Tensor<T> out(xv.shape());
  AlignedVector<T> xhat(xv.size());
  std::vector<T> rstd(N * groups);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = (n * C + g * cpg) * HW;
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < M; ++i) mean += xv[off + i];
      mean /= double(M);
      for (std::size_t i = 0; i < M; ++i) {
        const double d = xv[off + i] - mean;
        var += d * d;
      }
      var /= double(M);
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[n * groups + g] = T(r);
      for (std::size_t i = 0; i < M; ++i) {
        const std::size_t c = g * cpg + i / HW;
        const T xh = T((xv[off + i] - mean) * r);
        xhat[off + i] = xh;
        out[off + i] = xh * ga[c] + be[c];
      }
    }
  }
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, N, C, HW, groups, cpg, M, xhat = std::move(xhat), rstd = std::move(rstd)](
                         Tape<T>& tp, std::size_t self) {
                       const Tensor<T>& go = tp.grad_at(self);
                       const T* ga = tp.value(gamma).data();
                       if (tp.requires_grad(gamma) || tp.requires_grad(beta)) {
                         const bool gg = tp.requires_grad(gamma), gb = tp.requires_grad(beta);
                         for (std::size_t n = 0; n < N; ++n)
                           for (std::size_t c = 0; c < C; ++c) {
                             const std::size_t off = (n * C + c) * HW;
                             T sg = 0, sb = 0;
                             for (std::size_t i = 0; i < HW; ++i) {
                               sg += go[off + i] * xhat[off + i];
                               sb += go[off + i];
                             }
                             if (gg) tp.grad(gamma)[c] += sg;
                             if (gb) tp.grad(beta)[c] += sb;
                           }
                       }
                       if (!tp.requires_grad(x)) return;
                       Tensor<T>& gx = tp.grad(x);
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t g = 0; g < groups; ++g) {
                           const std::size_t off = (n * C + g * cpg) * HW;
                           double s1 = 0, s2 = 0;
                           for (std::size_t i = 0; i < M; ++i) {
                             const double dxh = double(go[off + i]) * ga[g * cpg + i / HW];
                             s1 += dxh;
                             s2 += dxh * xhat[off + i];
                           }
                           s1 /= double(M);
                           s2 /= double(M);
                           const double r = rstd[n * groups + g];
                           for (std::size_t i = 0; i < M; ++i) {
                             const double dxh = double(go[off + i]) * ga[g * cpg + i / HW];
                             gx[off + i] += T(r * (dxh - s1 - xhat[off + i] * s2));
                           }
                         }
                     });
}

template <class T>
Var silu(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <class T>
Var leaky_relu(Tape<T>& tape, Var x, T slope) {
  return detail::unary(
      tape, x, [slope](T v) { return v > 0 ? v : slope * v; }, [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <class T>
Var relu(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <class T>
Var exp(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// a*x + b with scalar a, b.
template <class T>
Var affine(Tape<T>& tape, Var x, T a, T b) {
  return detail::unary(
      tape, x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

/// Clamp with zero gradient outside [lo, hi].
template <class T>
Var clamp(Tape<T>& tape, Var x, T lo, T hi) {
  return detail::unary(
      tape, x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

/// a*x + b*y elementwise with scalar coefficients.
template <class T>
Var axpby(Tape<T>& tape, T a, Var x, T b, Var y) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& yv = tape.value(y);
  require_same_shape(xv.shape(), yv.shape(), "axpby");
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xv[i] + b * yv[i];
  return tape.record(std::move(out), {x, y}, [a, x, b, y](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    if (tp.requires_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
    }
    if (tp.requires_grad(y)) {
      Tensor<T>& gy = tp.grad(y);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += b * g[i];
    }
  });
}

template <class T>
Var add(Tape<T>& tape, Var x, Var y) {
  return axpby(tape, T(1), x, T(1), y);
}

template <class T>
Var sub(Tape<T>& tape, Var x, Var y) {
  return axpby(tape, T(1), x, T(-1), y);
}

template <class T>
Var mul(Tape<T>& tape, Var x, Var y) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& yv = tape.value(y);
  require_same_shape(xv.shape(), yv.shape(), "mul");
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * yv[i];
  return tape.record(std::move(out), {x, y}, [x, y](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    if (tp.requires_grad(x)) {
      const Tensor<T>& yv = tp.value(y);
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
    }
    if (tp.requires_grad(y)) {
      const Tensor<T>& xv = tp.value(x);
      Tensor<T>& gy = tp.grad(y);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * xv[i];
    }
  });
}

/// x [N,C,H,W] + e [N,C] broadcast over space.
template <class T>
Var add_channel_bias(Tape<T>& tape, Var x, Var e) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& ev = tape.value(e);
  require_rank4(xv.shape(), "add_channel_bias");
  const std::size_t N = xv.batch(), C = xv.channels(), HW = xv.height() * xv.width();
  if (ev.rank() != 2 || ev.dim(0) != N || ev.dim(1) != C) {
    throw DimensionError("add_channel_bias: " + xv.shape().str() + " + " + ev.shape().str());
  }
  Tensor<T> out = xv;
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t i = 0; i < HW; ++i) out[nc * HW + i] += ev[nc];
  return tape.record(std::move(out), {x, e}, [x, e, N, C, HW](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    if (tp.requires_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(e)) {
      Tensor<T>& ge = tp.grad(e);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        T s = 0;
        for (std::size_t i = 0; i < HW; ++i) s += g[nc * HW + i];
        ge[nc] += s;
      }
    }
  });
}

/// Channel-wise concatenation [a; b].
template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_rank4(av.shape(), "concat");
  require_rank4(bv.shape(), "concat");
  if (av.batch() != bv.batch() || av.height() != bv.height() || av.width() != bv.width()) {
    throw DimensionError("concat: " + av.shape().str() + " vs " + bv.shape().str());
  }
  const std::size_t N = av.batch(), HW = av.height() * av.width();
  const std::size_t ca = av.channels() * HW, cb = bv.channels() * HW;
  Tensor<T> out(Shape{N, av.channels() + bv.channels(), av.height(), av.width()});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy(av.data() + n * ca, av.data() + (n + 1) * ca, out.data() + n * (ca + cb));
    std::copy(bv.data() + n * cb, bv.data() + (n + 1) * cb, out.data() + n * (ca + cb) + ca);
  }
  return tape.record(std::move(out), {a, b}, [a, b, N, ca, cb](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    for (std::size_t n = 0; n < N; ++n) {
      const T* gn = g.data() + n * (ca + cb);
      if (tp.requires_grad(a)) {
        T* d = tp.grad(a).data() + n * ca;
        for (std::size_t i = 0; i < ca; ++i) d[i] += gn[i];
      }
      if (tp.requires_grad(b)) {
        T* d = tp.grad(b).data() + n * cb;
        for (std::size_t i = 0; i < cb; ++i) d[i] += gn[ca + i];
      }
    }
  });
}

/// Channels [begin, begin+count) of x.
template <class T>
Var slice_channels(Tape<T>& tape, Var x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = tape.value(x);
  require_rank4(xv.shape(), "slice_channels");
  if (begin + count > xv.channels()) throw DimensionError("slice_channels: range exceeds channel count");
  const std::size_t N = xv.batch(), C = xv.channels(), HW = xv.height() * xv.width();
  Tensor<T> out(Shape{N, count, xv.height(), xv.width()});
  for (std::size_t n = 0; n < N; ++n)
    std::copy(xv.data() + (n * C + begin) * HW, xv.data() + (n * C + begin + count) * HW, out.data() + n * count * HW);
  return tape.record(std::move(out), {x}, [x, begin, count, N, C, HW](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    T* d = tp.grad(x).data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < count * HW; ++i) d[(n * C + begin) * HW + i] += g[n * count * HW + i];
  });
}

template <class T>
Var upsample_nearest2x(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  require_rank4(xv.shape(), "upsample");
  const std::size_t NC = xv.batch() * xv.channels(), H = xv.height(), W = xv.width();
  Tensor<T> out(Shape{xv.batch(), xv.channels(), 2 * H, 2 * W});
  for (std::size_t p = 0; p < NC; ++p)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx) out[(p * 2 * H + y) * 2 * W + xx] = xv[(p * H + y / 2) * W + xx / 2];
  return tape.record(std::move(out), {x}, [x, NC, H, W](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    T* d = tp.grad(x).data();
    for (std::size_t p = 0; p < NC; ++p)
      for (std::size_t y = 0; y < 2 * H; ++y)
        for (std::size_t xx = 0; xx < 2 * W; ++xx) d[(p * H + y / 2) * W + xx / 2] += g[(p * 2 * H + y) * 2 * W + xx];
  });
}

/// 2x2 average pooling (area downsampling by 2).
template <class T>
Var area_downsample2(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  require_rank4(xv.shape(), "area_downsample2");
  if (xv.height() % 2 || xv.width() % 2) throw DimensionError("area_downsample2: odd spatial size");
  const std::size_t NC = xv.batch() * xv.channels(), H = xv.height() / 2, W = xv.width() / 2;
  Tensor<T> out(Shape{xv.batch(), xv.channels(), H, W});
  for (std::size_t p = 0; p < NC; ++p)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        const T* r0 = xv.data() + (p * 2 * H + 2 * y) * 2 * W + 2 * xx;
        const T* r1 = r0 + 2 * W;
        out[(p * H + y) * W + xx] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  return tape.record(std::move(out), {x}, [x, NC, H, W](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    T* d = tp.grad(x).data();
    for (std::size_t p = 0; p < NC; ++p)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const T v = g[(p * H + y) * W + xx] * T(0.25);
          T* r0 = d + (p * 2 * H + 2 * y) * 2 * W + 2 * xx;
          T* r1 = r0 + 2 * W;
          r0[0] += v;
          r0[1] += v;
          r1[0] += v;
          r1[1] += v;
        }
  });
}

/// Single-head self-attention over spatial positions:
/// out[:, i] = sum_j softmax_j(q_i . k_j / sqrt(C)) v[:, j].
template <class T>
Var attention(Tape<T>& tape, Var q, Var k, Var v) {
  using namespace detail;
  const Tensor<T>& qv = tape.value(q);
  require_rank4(qv.shape(), "attention");
  require_same_shape(qv.shape(), tape.value(k).shape(), "attention k");
  require_same_shape(qv.shape(), tape.value(v).shape(), "attention v");
  const std::size_t N = qv.batch(), C = qv.channels(), L = qv.height() * qv.width();
  const T scale = T(1) / std::sqrt(T(C));
  Tensor<T> out(qv.shape());
  AlignedVector<T> probs(N * L * L);
  for (std::size_t n = 0; n < N; ++n) {
    ConstMatMap<T> Q(qv.data() + n * C * L, long(C), long(L));
    ConstMatMap<T> K(tape.value(k).data() + n * C * L, long(C), long(L));
    ConstMatMap<T> V(tape.value(v).data() + n * C * L, long(C), long(L));
    MatMap<T> A(probs.data() + n * L * L, long(L), long(L));
    A.noalias() = (Q.transpose() * K) * scale;
    for (long i = 0; i < long(L); ++i) {
      const T m = A.row(i).maxCoeff();
      A.row(i) = (A.row(i).array() - m).exp();
      A.row(i) /= A.row(i).sum();
    }
    MatMap<T> O(out.data() + n * C * L, long(C), long(L));
    O.noalias() = V * A.transpose();
  }
  return tape.record(std::move(out), {q, k, v}, [q, k, v, N, C, L, scale, probs = std::move(probs)](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& go = tp.grad_at(self);
    RowMat<T> dA(static_cast<long>(L), static_cast<long>(L));
    for (std::size_t n = 0; n < N; ++n) {
      ConstMatMap<T> G(go.data() + n * C * L, long(C), long(L));
      ConstMatMap<T> A(probs.data() + n * L * L, long(L), long(L));
      ConstMatMap<T> V(tp.value(v).data() + n * C * L, long(C), long(L));
      if (tp.requires_grad(v)) {
        MatMap<T> GV(tp.grad(v).data() + n * C * L, long(C), long(L));
        GV.noalias() += G * A;
      }
      if (!tp.requires_grad(q) && !tp.requires_grad(k)) continue;
      dA.noalias() = G.transpose() * V;
      // Softmax backward, row-wise: dS = A .* (dA - rowsum(dA .* A)).
      for (long i = 0; i < long(L); ++i) {
        const T s = (dA.row(i).array() * A.row(i).array()).sum();
        dA.row(i) = (A.row(i).array() * (dA.row(i).array() - s)) * scale;
      }
      if (tp.requires_grad(q)) {
        MatMap<T> GQ(tp.grad(q).data() + n * C * L, long(C), long(L));
        GQ.noalias() += ConstMatMap<T>(tp.value(k).data() + n * C * L, long(C), long(L)) * dA.transpose();
      }
      if (tp.requires_grad(k)) {
        MatMap<T> GK(tp.grad(k).data() + n * C * L, long(C), long(L));
        GK.noalias() += ConstMatMap<T>(tp.value(q).data() + n * C * L, long(C), long(L)) * dA;
      }
    }
  });
}

/// Global average over H, W: [N,C,H,W] -> [N,C].
template <class T>
Var mean_spatial(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  require_rank4(xv.shape(), "mean_spatial");
  const std::size_t NC = xv.batch() * xv.channels(), HW = xv.height() * xv.width();
  Tensor<T> out(Shape{xv.batch(), xv.channels()});
  for (std::size_t p = 0; p < NC; ++p) {
    T s = 0;
    for (std::size_t i = 0; i < HW; ++i) s += xv[p * HW + i];
    out[p] = s / T(HW);
  }
  return tape.record(std::move(out), {x}, [x, NC, HW](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    T* d = tp.grad(x).data();
    for (std::size_t p = 0; p < NC; ++p)
      for (std::size_t i = 0; i < HW; ++i) d[p * HW + i] += g[p] / T(HW);
  });
}

/// Mean of all elements, as a one-element tensor.
template <class T>
Var mean_all(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  double s = 0;
  for (T v : xv.values()) s += v;
  const std::size_t n = xv.size();
  Tensor<T> out(Shape{1}, T(s / double(n)));
  return tape.record(std::move(out), {x}, [x, n](Tape<T>& tp, std::size_t self) {
    const T g = tp.grad_at(self)[0] / T(n);
    for (auto& d : tp.grad(x).span()) d += g;
  });
}

/// Mean squared difference, scalar.
template <class T>
Var mse(Tape<T>& tape, Var a, Var b) {
  const Var d = sub(tape, a, b);
  return mean_all(tape, mul(tape, d, d));
}

/// Per-channel Sobel gradient magnitude sqrt(gx^2 + gy^2 + eps), replicate padding.
/// Kernels are scaled by 1/8 so gx, gy estimate per-pixel derivatives.
template <class T>
Var sobel_magnitude(Tape<T>& tape, Var x, T eps = T(1e-6)) {
  const Tensor<T>& xv = tape.value(x);
  require_rank4(xv.shape(), "sobel_magnitude");
  const std::size_t NC = xv.batch() * xv.channels();
  const long H = long(xv.height()), W = long(xv.width());
  auto px = [H, W](const T* p, long y, long x) { return p[std::clamp(y, 0L, H - 1) * W + std::clamp(x, 0L, W - 1)]; };
  Tensor<T> out(xv.shape());
  Tensor<T> gxs(xv.shape()), gys(xv.shape());
  const T k = T(0.125);
  for (std::size_t p = 0; p < NC; ++p) {
    const T* src = xv.data() + p * H * W;
    for (long y = 0; y < H; ++y)
      for (long xx = 0; xx < W; ++xx) {
        const T gx = k * ((px(src, y - 1, xx + 1) + 2 * px(src, y, xx + 1) + px(src, y + 1, xx + 1)) -
                         (px(src, y - 1, xx - 1) + 2 * px(src, y, xx - 1) + px(src, y + 1, xx - 1)));
        const T gy = k * ((px(src, y + 1, xx - 1) + 2 * px(src, y + 1, xx) + px(src, y + 1, xx + 1)) -
                         (px(src, y - 1, xx - 1) + 2 * px(src, y - 1, xx) + px(src, y - 1, xx + 1)));
        const std::size_t i = p * H * W + y * W + xx;
        gxs[i] = gx;
        gys[i] = gy;
        out[i] = std::sqrt(gx * gx + gy * gy + eps);
      }
  }
  return tape.record(std::move(out), {x}, [x, NC, H, W, k, gxs = std::move(gxs), gys = std::move(gys)](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_at(self);
    const Tensor<T>& mag = tp.value(Var{self});
    T* d = tp.grad(x).data();
    auto acc = [H, W](T* p, long y, long x, T v) { p[std::clamp(y, 0L, H - 1) * W + std::clamp(x, 0L, W - 1)] += v; };
    for (std::size_t p = 0; p < NC; ++p) {
      T* dst = d + p * H * W;
      for (long y = 0; y < H; ++y)
        for (long xx = 0; xx < W; ++xx) {
          const std::size_t i = p * H * W + y * W + xx;
          const T dgx = k * g[i] * gxs[i] / mag[i];
          const T dgy = k * g[i] * gys[i] / mag[i];
          acc(dst, y - 1, xx + 1, dgx);
          acc(dst, y, xx + 1, 2 * dgx);
          acc(dst, y + 1, xx + 1, dgx);
          acc(dst, y - 1, xx - 1, -dgx);
          acc(dst, y, xx - 1, -2 * dgx);
          acc(dst, y + 1, xx - 1, -dgx);
          acc(dst, y + 1, xx - 1, dgy);
          acc(dst, y + 1, xx, 2 * dgy);
          acc(dst, y + 1, xx + 1, dgy);
          acc(dst, y - 1, xx - 1, -dgy);
          acc(dst, y - 1, xx, -2 * dgy);
          acc(dst, y - 1, xx + 1, -dgy);
        }
    }
  });
}

}  // namespace invsr::nn
