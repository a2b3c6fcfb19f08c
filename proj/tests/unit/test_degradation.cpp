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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "invsr/degradation.hpp"
#include "invsr/rng.hpp"

using namespace invsr;

namespace {

/// Smooth random image: a few low-frequency sinusoids per channel, kept inside [0.1, 0.9].
Tensor<float> smooth_image(std::uint64_t seed, std::size_t size = 64) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<float> x(Shape{1, 3, size, size});
  for (std::size_t c = 0; c < 3; ++c) {
    const double fx = 1 + 3 * u(rng), fy = 1 + 3 * u(rng), ph = 6.28 * u(rng), base = 0.3 + 0.4 * u(rng);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t xx = 0; xx < size; ++xx)
        x.at(0, c, y, xx) = float(base + 0.2 * std::sin(fx * 6.28 * xx / size + fy * 6.28 * y / size + ph));
  }
  return x;
}

TEST(GaussianKernel, Examples) {
  const auto d = gaussian_kernel(0.0, 2);
  EXPECT_EQ(d, (std::vector<double>{0, 0, 1, 0, 0}));
  const auto k = gaussian_kernel(1.0, 1);
  const double e = std::exp(-0.5), s = 1 + 2 * e;
  EXPECT_NEAR(k[0], e / s, 1e-15);
  EXPECT_NEAR(k[1], 1 / s, 1e-15);
  EXPECT_NEAR(k[0], 0.2741, 5e-5);
  EXPECT_NEAR(k[1], 0.4519, 5e-5);
  EXPECT_EQ(k[0], k[2]);
}

TEST(GaussianKernel, SumsToOne) {
  for (double sigma : {0.0, 0.2, 0.7, 1.0, 2.0, 5.0})
    for (int r : {0, 1, 3, 9}) {
      const auto k = gaussian_kernel(sigma, r);
      EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
    }
  EXPECT_THROW(gaussian_kernel(-0.1, 1), DomainError);
}

TEST(Degrade, IdentityPipelineIsBitIdentical) {
  const auto x = smooth_image(1);
  const auto p = degrade(x, DegradationConfig::identity(1), 5);
  EXPECT_TRUE(p.lr_up == x);
  EXPECT_EQ(p.record.blur_sigma, 0.0);
  EXPECT_FALSE(p.record.jpeg_quality.has_value());
}

TEST(Degrade, ConstantImageStaysConstant) {
  DegradationConfig cfg;
  cfg.noise_sigma = {0, 0};
  cfg.jpeg_prob = 0;
  const Tensor<float> x(Shape{1, 3, 32, 32}, 0.37f);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = degrade(x, cfg, seed);
    EXPECT_EQ(p.lr_up.shape(), x.shape());
    for (float v : p.lr_up.span()) EXPECT_NEAR(v, 0.37f, 1e-6);
  }
}

TEST(Degrade, NoiseStandardDeviation) {
  auto cfg = DegradationConfig::identity(1);
  cfg.noise_sigma = {0.05, 0.05};
  const Tensor<float> x(Shape{1, 1, 64, 64}, 0.5f);  // far from the clip bounds
  const auto p = degrade(x, cfg, 9);
  double m = 0, q = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m += p.lr_up[i] - x[i];
  m /= x.size();
  for (std::size_t i = 0; i < x.size(); ++i) q += std::pow(p.lr_up[i] - x[i] - m, 2);
  const double sd = std::sqrt(q / (x.size() - 1));
  EXPECT_NEAR(sd, 0.05, 0.005);
}

TEST(Degrade, Deterministic) {
  const auto x = smooth_image(2);
  DegradationConfig cfg;
  cfg.jpeg_prob = 1.0;
  const auto a = degrade(x, cfg, 42), b = degrade(x, cfg, 42), c = degrade(x, cfg, 43);
  EXPECT_TRUE(a.lr_up == b.lr_up);
  EXPECT_TRUE(a.lr == b.lr);
  EXPECT_EQ(a.record.blur_sigma, b.record.blur_sigma);
  EXPECT_EQ(a.record.jpeg_quality, b.record.jpeg_quality);
  EXPECT_FALSE(a.lr_up == c.lr_up);
}

TEST(Degrade, RecordsParametersWithinRanges) {
  const auto x = smooth_image(3);
  DegradationConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = degrade(x, cfg, seed);
    EXPECT_EQ(p.lr.height(), 16u);
    EXPECT_EQ(p.lr_up.shape(), x.shape());
    EXPECT_GE(p.record.blur_sigma, 0.2);
    EXPECT_LE(p.record.blur_sigma, 2.0);
    EXPECT_LE(p.record.noise_sigma, 0.1);
    if (p.record.jpeg_quality) {
      EXPECT_GE(*p.record.jpeg_quality, 40);
      EXPECT_LE(*p.record.jpeg_quality, 95);
    }
    for (float v : p.lr_up.span()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Degrade, Errors) {
  EXPECT_THROW(degrade(Tensor<float>(Shape{1, 3, 30, 32}), DegradationConfig{}, 1), DimensionError);
  DegradationConfig bad;
  bad.jpeg_prob = 1.5;
  EXPECT_THROW(degrade(Tensor<float>(Shape{1, 3, 32, 32}), bad, 1), ConfigError);
  bad = {};
  bad.blur_sigma = {2.0, 1.0};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(BicubicUpsample, FactorOneAndConstant) {
  const auto x = smooth_image(4, 16);
  EXPECT_TRUE(bicubic_upsample(x, 1) == x);
  const auto c = bicubic_upsample(Tensor<double>(Shape{1, 2, 5, 7}, 0.25), 3);
  EXPECT_EQ(c.shape(), (Shape{1, 2, 15, 21}));
  for (double v : c.span()) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(BicubicUpsample, ReproducesLinearRampInInterior) {
  const std::size_t h = 10, w = 12;
  Tensor<double> x(Shape{1, 1, h, w});
  auto ramp = [](double y, double xx) { return 0.1 + 0.03 * xx - 0.02 * y; };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) x.at(0, 0, y, xx) = ramp(double(y), double(xx));
  const auto up = bicubic_upsample(x, 2);
  // interior: every tap stays inside the source grid
  for (std::size_t y = 4; y < 2 * h - 4; ++y)
    for (std::size_t xx = 4; xx < 2 * w - 4; ++xx) {
      const double sy = (y + 0.5) / 2 - 0.5, sx = (xx + 0.5) / 2 - 0.5;
      EXPECT_NEAR(up.at(0, 0, y, xx), ramp(sy, sx), 1e-6) << y << "," << xx;
    }
}

TEST(AreaDownsample, ConstantIsExact) {
  const auto d = area_downsample(Tensor<float>(Shape{2, 3, 8, 12}, 0.625f), 4);
  EXPECT_EQ(d.shape(), (Shape{2, 3, 2, 3}));
  for (float v : d.span()) EXPECT_EQ(v, 0.625f);
  EXPECT_THROW(area_downsample(Tensor<float>(Shape{1, 1, 6, 8}), 4), DimensionError);
}

TEST(GaussianBlur, PreservesConstantImages) {
  for (double sigma : {0.2, 1.0, 2.0}) {
    const auto b = gaussian_blur(Tensor<double>(Shape{1, 3, 9, 9}, 0.4), sigma);
    for (double v : b.span()) EXPECT_NEAR(v, 0.4, 1e-6);
  }
}

TEST(JpegLite, MaxQualityIsNearLossless) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = smooth_image(10 + seed, 32);
    const auto j = jpeg_lite(x, 100);
    double q = 0;
    for (std::size_t i = 0; i < x.size(); ++i) q += std::pow(double(j[i]) - x[i], 2);
    EXPECT_LT(std::sqrt(q / x.size()), 2.0 / 255.0);
  }
}

TEST(JpegLite, LowQualityIntroducesError) {
  const auto x = smooth_image(20, 32);
  EXPECT_GT(max_abs_diff(jpeg_lite(x, 5), x), 1e-3f);
}

}  // namespace
