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
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "invsr/error.hpp"
#include "invsr/tensor.hpp"

namespace invsr {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct DegradationConfig {
  int scale = 4;
  Range blur_sigma{0.2, 2.0};
  Range noise_sigma{0.0, 0.1};
  std::array<int, 2> jpeg_quality{40, 95};
  double jpeg_prob = 0.5;

  void validate() const {
    if (scale < 1) throw ConfigError("degradation.scale must be >= 1");
    if (!(blur_sigma.lo >= 0 && blur_sigma.lo <= blur_sigma.hi)) throw ConfigError("degradation.blur_sigma: invalid range");
    if (!(noise_sigma.lo >= 0 && noise_sigma.lo <= noise_sigma.hi)) throw ConfigError("degradation.noise_sigma: invalid range");
    if (!(jpeg_quality[0] >= 1 && jpeg_quality[0] <= jpeg_quality[1] && jpeg_quality[1] <= 100)) {
      throw ConfigError("degradation.jpeg_quality: invalid range");
    }
    if (!(jpeg_prob >= 0 && jpeg_prob <= 1)) throw ConfigError("degradation.jpeg_prob must lie in [0,1]");
  }

  /// Identity settings: no blur, no noise, no compression.
  static DegradationConfig identity(int scale = 1) {
    DegradationConfig c;
    c.scale = scale;
    c.blur_sigma = {0, 0};
    c.noise_sigma = {0, 0};
    c.jpeg_prob = 0;
    return c;
  }
};

/// Parameters actually drawn for one image.
struct DegradationRecord {
  double blur_sigma = 0;
  double noise_sigma = 0;
  std::optional<int> jpeg_quality;
  int scale = 1;
};

struct ImagePair {
  Tensor<float> hr;     // x0 in [0,1]
  Tensor<float> lr_up;  // y0 on the HR grid
  Tensor<float> lr;     // degraded low-resolution image before upsampling
  DegradationRecord record;
  std::uint64_t seed = 0;
};

/// Normalized 1-D Gaussian of length 2r+1; sigma = 0 gives a delta.
inline std::vector<double> gaussian_kernel(double sigma, int radius) {
  if (sigma < 0) throw DomainError("gaussian_kernel: negative sigma");
  if (radius < 0) throw DomainError("gaussian_kernel: negative radius");
  std::vector<double> k(2 * radius + 1, 0.0);
  if (sigma == 0) {
    k[radius] = 1.0;
    return k;
  }
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

namespace detail {

inline long reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

/// Separable Gaussian blur with reflect padding; sigma = 0 is a no-op.
template <class T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
  require_rank4(x.shape(), "gaussian_blur");
  if (sigma == 0) return x;
  const int r = std::max(1, int(std::ceil(3.0 * sigma)));
  const auto k = gaussian_kernel(sigma, r);
  const long H = long(x.height()), W = long(x.width());
  const std::size_t planes = x.batch() * x.channels();
  Tensor<T> tmp(x.shape()), out(x.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * H * W;
    T* mid = tmp.data() + p * H * W;
    T* dst = out.data() + p * H * W;
    for (long y = 0; y < H; ++y)
      for (long xx = 0; xx < W; ++xx) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * src[y * W + detail::reflect_index(xx + i, W)];
        mid[y * W + xx] = T(s);
      }
    for (long y = 0; y < H; ++y)
      for (long xx = 0; xx < W; ++xx) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * mid[detail::reflect_index(y + i, H) * W + xx];
        dst[y * W + xx] = T(s);
      }
  }
  return out;
}

/// Mean over non-overlapping factor x factor cells.
template <class T>
Tensor<T> area_downsample(const Tensor<T>& x, int factor) {
  require_rank4(x.shape(), "area_downsample");
  if (factor < 1) throw DomainError("area_downsample: factor must be >= 1");
  if (factor == 1) return x;
  if (x.height() % factor || x.width() % factor) throw DimensionError("area_downsample: size not divisible by factor");
  const std::size_t f = std::size_t(factor), H = x.height() / f, W = x.width() / f;
  Tensor<T> out(Shape{x.batch(), x.channels(), H, W});
  const double inv = 1.0 / double(f * f);
  for (std::size_t p = 0; p < x.batch() * x.channels(); ++p)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        double s = 0;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx) s += x.data()[(p * x.height() + y * f + dy) * x.width() + xx * f + dx];
        out.data()[(p * H + y) * W + xx] = T(s * inv);
      }
  return out;
}

namespace detail {

inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0;
}

}  // namespace detail

/// Catmull-Rom bicubic resize by an integer factor, half-pixel centers, edge clamping.
template <class T>
Tensor<T> bicubic_upsample(const Tensor<T>& x, int factor) {
  require_rank4(x.shape(), "bicubic_upsample");
  if (factor < 1) throw DomainError("bicubic_upsample: factor must be >= 1");
  if (factor == 1) return x;
  const long h = long(x.height()), w = long(x.width());
  const long H = h * factor, W = w * factor;
  // Taps are identical for every row/column with the same phase.
  struct Taps {
    std::array<long, 4> idx;
    std::array<double, 4> wt;
  };
  auto make_taps = [factor](long n_out, long n_in) {
    std::vector<Taps> taps(n_out);
    for (long o = 0; o < n_out; ++o) {
      const double src = (o + 0.5) / factor - 0.5;
      const long base = long(std::floor(src));
      for (int j = 0; j < 4; ++j) {
        const long i = base - 1 + j;
        taps[o].idx[j] = std::clamp(i, 0L, n_in - 1);
        taps[o].wt[j] = detail::cubic_weight(src - double(i));
      }
    }
    return taps;
  };
  const auto ty = make_taps(H, h), tx = make_taps(W, w);
  Tensor<T> out(Shape{x.batch(), x.channels(), std::size_t(H), std::size_t(W)});
  std::vector<double> rows(std::size_t(h * W));
  for (std::size_t p = 0; p < x.batch() * x.channels(); ++p) {
    const T* src = x.data() + p * h * w;
    for (long y = 0; y < h; ++y)
      for (long xx = 0; xx < W; ++xx) {
        double s = 0;
        for (int j = 0; j < 4; ++j) s += tx[xx].wt[j] * src[y * w + tx[xx].idx[j]];
        rows[y * W + xx] = s;
      }
    T* dst = out.data() + p * H * W;
    for (long y = 0; y < H; ++y)
      for (long xx = 0; xx < W; ++xx) {
        double s = 0;
        for (int j = 0; j < 4; ++j) s += ty[y].wt[j] * rows[ty[y].idx[j] * W + xx];
        dst[y * W + xx] = T(s);
      }
  }
  return out;
}

namespace detail {

inline constexpr std::array<int, 64> kJpegLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,  69,  56,
    14, 17, 22, 29, 51,  87,  80,  62,  18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline std::array<double, 64> jpeg_table(int quality) {
  quality = std::clamp(quality, 1, 100);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<double, 64> q{};
  for (int i = 0; i < 64; ++i) q[i] = std::clamp((kJpegLuma[i] * scale + 50) / 100, 1, 255);
  return q;
}

inline const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x) {
        const double cu = u == 0 ? std::sqrt(0.125) : 0.5;
        b[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    return b;
  }();
  return basis;
}

}  // namespace detail

/// Luminance-only block-DCT quantization. Works on a [1,3,H,W] image in [0,1]:
/// converts to full-range YCbCr, quantizes 8x8 DCT blocks of Y with the JPEG
/// luminance table scaled for `quality`, converts back and clips to [0,1].
/// Image edges are padded by replication to whole blocks.
template <class T>
Tensor<T> jpeg_lite(const Tensor<T>& x, int quality) {
  require_rank4(x.shape(), "jpeg_lite");
  if (x.channels() != 3) throw DimensionError("jpeg_lite: expects 3 channels");
  const auto q = detail::jpeg_table(quality);
  const auto& B = detail::dct_basis();
  const std::size_t H = x.height(), W = x.width();
  Tensor<T> out = x;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    std::vector<double> Y(H * W), Cb(H * W), Cr(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
      const double r = 255.0 * x.data()[(n * 3 + 0) * H * W + i];
      const double g = 255.0 * x.data()[(n * 3 + 1) * H * W + i];
      const double b = 255.0 * x.data()[(n * 3 + 2) * H * W + i];
      Y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
      Cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
      Cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    for (std::size_t by = 0; by < H; by += 8)
      for (std::size_t bx = 0; bx < W; bx += 8) {
        double blk[64], coef[64], tmp[64];
        for (int y = 0; y < 8; ++y)
          for (int xx = 0; xx < 8; ++xx) {
            const std::size_t sy = std::min(by + y, H - 1), sx = std::min(bx + xx, W - 1);
            blk[y * 8 + xx] = Y[sy * W + sx] - 128.0;
          }
        // coef = B * blk * B^T
        for (int u = 0; u < 8; ++u)
          for (int xx = 0; xx < 8; ++xx) {
            double s = 0;
            for (int y = 0; y < 8; ++y) s += B[u * 8 + y] * blk[y * 8 + xx];
            tmp[u * 8 + xx] = s;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int xx = 0; xx < 8; ++xx) s += tmp[u * 8 + xx] * B[v * 8 + xx];
            coef[u * 8 + v] = std::round(s / q[u * 8 + v]) * q[u * 8 + v];
          }
        // blk = B^T * coef * B
        for (int y = 0; y < 8; ++y)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int u = 0; u < 8; ++u) s += B[u * 8 + y] * coef[u * 8 + v];
            tmp[y * 8 + v] = s;
          }
        for (int y = 0; y < 8; ++y)
          for (int xx = 0; xx < 8; ++xx) {
            if (by + y >= H || bx + xx >= W) continue;
            double s = 0;
            for (int v = 0; v < 8; ++v) s += tmp[y * 8 + v] * B[v * 8 + xx];
            Y[(by + y) * W + bx + xx] = s + 128.0;
          }
      }
    for (std::size_t i = 0; i < H * W; ++i) {
      const double r = Y[i] + 1.402 * Cr[i];
      const double g = Y[i] - 0.344136 * Cb[i] - 0.714136 * Cr[i];
      const double b = Y[i] + 1.772 * Cb[i];
      out.data()[(n * 3 + 0) * H * W + i] = T(std::clamp(r / 255.0, 0.0, 1.0));
      out.data()[(n * 3 + 1) * H * W + i] = T(std::clamp(g / 255.0, 0.0, 1.0));
      out.data()[(n * 3 + 2) * H * W + i] = T(std::clamp(b / 255.0, 0.0, 1.0));
    }
  }
  return out;
}

/// blur -> area downsample -> gaussian noise (clipped) -> optional jpeg_lite -> bicubic upsample.
/// All random draws come from `rng` in that order.
template <class Rng>
ImagePair degrade(const Tensor<float>& x0, const DegradationConfig& cfg, Rng& rng) {
  cfg.validate();
  require_rank4(x0.shape(), "degrade");
  if (x0.height() % cfg.scale || x0.width() % cfg.scale) {
    throw DimensionError("degrade: image size " + x0.shape().str() + " not divisible by scale " + std::to_string(cfg.scale));
  }
  auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  ImagePair pair;
  pair.hr = x0;
  DegradationRecord& rec = pair.record;
  rec.scale = cfg.scale;
  rec.blur_sigma = uniform(cfg.blur_sigma.lo, cfg.blur_sigma.hi);
  rec.noise_sigma = uniform(cfg.noise_sigma.lo, cfg.noise_sigma.hi);
  const bool jpeg = cfg.jpeg_prob > 0 && std::bernoulli_distribution(cfg.jpeg_prob)(rng);
  if (jpeg) rec.jpeg_quality = std::uniform_int_distribution<int>(cfg.jpeg_quality[0], cfg.jpeg_quality[1])(rng);

  Tensor<float> lr = area_downsample(gaussian_blur(x0, rec.blur_sigma), cfg.scale);
  if (rec.noise_sigma > 0) {
    std::normal_distribution<double> nd(0.0, rec.noise_sigma);
    for (auto& v : lr.span()) v = float(std::clamp(double(v) + nd(rng), 0.0, 1.0));
  }
  if (rec.jpeg_quality) lr = jpeg_lite(lr, *rec.jpeg_quality);
  pair.lr_up = bicubic_upsample(lr, cfg.scale);
  pair.lr = std::move(lr);
  return pair;
}

inline ImagePair degrade(const Tensor<float>& x0, const DegradationConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImagePair p = degrade(x0, cfg, rng);
  p.seed = seed;
  return p;
}

}  // namespace invsr
