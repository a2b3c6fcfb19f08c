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
#include <limits>
#include <string>
#include <vector>

#include "invsr/degradation.hpp"
#include "invsr/error.hpp"
#include "invsr/tensor.hpp"

namespace invsr {

/// Limited-range BT.601 luma in [16/255, 235/255] from RGB in [0,1].
template <class T>
Tensor<T> rgb_to_y(const Tensor<T>& x) {
  require_rank4(x.shape(), "rgb_to_y");
  if (x.channels() != 3) throw DimensionError("rgb_to_y: expects 3 channels, got " + x.shape().str());
  const std::size_t HW = x.height() * x.width();
  Tensor<T> y(Shape{x.batch(), 1, x.height(), x.width()});
  for (std::size_t n = 0; n < x.batch(); ++n)
    for (std::size_t i = 0; i < HW; ++i) {
      const double r = x[(n * 3 + 0) * HW + i], g = x[(n * 3 + 1) * HW + i], b = x[(n * 3 + 2) * HW + i];
      y[n * HW + i] = static_cast<T>((16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
    }
  return y;
}

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// PSNR on luma, peak 1. Identical inputs give +infinity.
template <class T>
double psnr_y(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "psnr_y");
  const Tensor<T> ya = rgb_to_y(a), yb = rgb_to_y(b);
  double mse = 0;
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const double d = double(ya[i]) - double(yb[i]);
    mse += d * d;
  }
  mse /= double(ya.size());
  if (mse == 0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

/// Valid-mode separable filtering of one plane with a symmetric kernel.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t H, std::size_t W, const std::vector<double>& k) {
  const std::size_t K = k.size(), Ho = H - K + 1, Wo = W - K + 1;
  std::vector<double> tmp(H * Wo), out(Ho * Wo);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < K; ++i) s += k[i] * img[y * W + x + i];
      tmp[y * Wo + x] = s;
    }
  for (std::size_t y = 0; y < Ho; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < K; ++i) s += k[i] * tmp[(y + i) * Wo + x];
      out[y * Wo + x] = s;
    }
  return out;
}

}  // namespace detail

/// SSIM on luma: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1,
/// averaged over valid window positions and batch items.
template <class T>
double ssim_y(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ssim_y");
  constexpr std::size_t kWin = 11;
  if (a.height() < kWin || a.width() < kWin) throw DimensionError("ssim_y: image smaller than the 11x11 window");
  const Tensor<T> ya = rgb_to_y(a), yb = rgb_to_y(b);
  const auto k = gaussian_kernel(1.5, 5);
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const std::size_t H = ya.height(), W = ya.width(), HW = H * W;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < ya.batch(); ++n) {
    std::vector<double> x(HW), y(HW), xx(HW), yy(HW), xy(HW);
    for (std::size_t i = 0; i < HW; ++i) {
      x[i] = ya[n * HW + i];
      y[i] = yb[n * HW + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, H, W, k), my = detail::filter_valid(y, H, W, k);
    const auto sxx = detail::filter_valid(xx, H, W, k), syy = detail::filter_valid(yy, H, W, k);
    const auto sxy = detail::filter_valid(xy, H, W, k);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    count += mx.size();
  }
  return total / double(count);
}

struct MetricItem {
  std::string id;
  double psnr_y = 0;
  double ssim_y = 0;
};

struct Aggregate {
  double mean = 0;
  double std = 0;
};

/// Mean / population std; infinite values (identical images) are excluded from PSNR stats.
inline Aggregate aggregate(const std::vector<double>& v) {
  std::vector<double> f;
  for (double x : v)
    if (std::isfinite(x)) f.push_back(x);
  if (f.empty()) return {};
  double m = 0;
  for (double x : f) m += x;
  m /= double(f.size());
  double s = 0;
  for (double x : f) s += (x - m) * (x - m);
  return {m, std::sqrt(s / double(f.size()))};
}

struct MetricReport {
  std::vector<MetricItem> items;
  int start = 0;
  int steps = 0;
  std::uint64_t seed = 0;

  Aggregate psnr() const {
    std::vector<double> v;
    for (const auto& it : items) v.push_back(it.psnr_y);
    return aggregate(v);
  }
  Aggregate ssim() const {
    std::vector<double> v;
    for (const auto& it : items) v.push_back(it.ssim_y);
    return aggregate(v);
  }
};

}  // namespace invsr
