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
#include <random>

#include "invsr/diffusion.hpp"
#include "invsr/rng.hpp"

using namespace invsr;

namespace {

NoiseSchedule sd() { return build_schedule(ScheduleConfig::stable_diffusion()); }
NoiseSchedule two_step(double b1, double b2) { return build_schedule({2, b1, b2, BetaKind::linear}); }

Tensor<double> scalar(double v) { return Tensor<double>(Shape{1, 1, 1, 1}, v); }

Tensor<double> randn(std::mt19937_64& rng, Shape s = Shape{2, 3, 4, 5}) { return normal_like<double>(s, rng); }

/// (x0 = 1, abar_1 = 0.25, abar_2 ...) and (abar_1 = 0.64, abar_2 = 0.25) fixtures.
NoiseSchedule quarter() { return two_step(0.75, 0.8); }
NoiseSchedule quarter_after_064() { return two_step(0.36, 1.0 - 0.25 / 0.64); }

TEST(ForwardSample, ScalarExample) {
  const auto s = quarter();
  EXPECT_NEAR(forward_sample(scalar(2.0), 1, scalar(1.0), s)[0], 1.8660254, 1e-7);
}

TEST(ForwardSample, ZeroSignalAndNearIdentity) {
  const auto s = sd();
  std::mt19937_64 rng(1);
  const auto xi = randn(rng), x0 = randn(rng);
  const auto z = forward_sample(Tensor<double>(xi.shape()), 300, xi, s);
  for (std::size_t i = 0; i < xi.size(); ++i) EXPECT_NEAR(z[i], std::sqrt(1 - s.alpha_bar(300)) * xi[i], 1e-15);
  const auto near = forward_sample(x0, 1, xi, s);
  EXPECT_LE(l2_norm(axpby(1.0, near, -1.0, x0)), std::sqrt(s.beta(1)) * l2_norm(xi) + 1e-3 * l2_norm(x0));
}

TEST(ForwardSample, ShapeMismatch) {
  EXPECT_THROW(forward_sample(Tensor<double>(Shape{1, 1, 2, 2}), 1, Tensor<double>(Shape{1, 1, 2, 3}), sd()), DimensionError);
}

TEST(PredictX0, Examples) {
  const auto s = quarter();
  EXPECT_NEAR(predict_x0(scalar(1.8660254), scalar(1.0), 1, s)[0], 2.0, 1e-7);
  EXPECT_NEAR(predict_x0(scalar(3.0), scalar(0.0), 1, s)[0], 6.0, 1e-12);
}

TEST(PredictX0, InvertsForwardSample) {
  const auto s = sd();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> pick(1, 1000);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x0 = randn(rng), xi = randn(rng);
    const int t = pick(rng);
    EXPECT_LE(max_abs_diff(predict_x0(forward_sample(x0, t, xi, s), xi, t, s), x0), 1e-10) << t;
  }
}

TEST(GeneralizedStep, ScalarDeterministic) {
  const auto s = quarter_after_064();
  ASSERT_NEAR(s.alpha_bar(1), 0.64, 1e-15);
  ASSERT_NEAR(s.alpha_bar(2), 0.25, 1e-15);
  const SamplerConfig cfg{0.0, false};
  EXPECT_NEAR(generalized_step(scalar(1.8660254), scalar(1.0), 2, 1, cfg, scalar(0), s)[0], 2.2, 1e-6);
}

TEST(GeneralizedStep, FinalStepReturnsX0Hat) {
  const auto s = sd();
  std::mt19937_64 rng(3);
  const auto x = randn(rng), e = randn(rng), z = randn(rng);
  const auto x0 = predict_x0(x, e, 40, s);
  for (double eta : {0.0, 1.0}) EXPECT_LE(max_abs_diff(generalized_step(x, e, 40, 0, {eta, false}, z, s), x0), 1e-15);
  // the posterior-variance sigma vanishes at abar_prev = 1, so literal final-step noise adds nothing
  EXPECT_LE(max_abs_diff(generalized_step(x, e, 40, 0, {1.0, true}, z, s), x0), 1e-12);
}

TEST(GeneralizedStep, AncestralEquivalenceAtEtaOne) {
  const auto s = sd();
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pick(2, 1000);
  for (int trial = 0; trial < 100; ++trial) {
    const int t = pick(rng);
    const auto x = randn(rng), e = randn(rng), z = randn(rng);
    const double a = s.alpha(t), ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1), b = s.beta(t);
    const double sigma = std::sqrt((1 - ab_prev) / (1 - ab) * b);
    Tensor<double> want(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) want[i] = (x[i] - b / std::sqrt(1 - ab) * e[i]) / std::sqrt(a) + sigma * z[i];
    EXPECT_LE(max_abs_diff(generalized_step(x, e, t, t - 1, {1.0, false}, z, s), want), 1e-10) << t;
  }
}

TEST(GeneralizedStep, EtaZeroIgnoresNoise) {
  const auto s = sd();
  std::mt19937_64 rng(5);
  const auto x = randn(rng), e = randn(rng), z1 = randn(rng), z2 = randn(rng);
  EXPECT_TRUE(generalized_step(x, e, 200, 100, {0.0, false}, z1, s) == generalized_step(x, e, 200, 100, {0.0, false}, z2, s));
}

TEST(GeneralizedStep, Errors) {
  const auto s = sd();
  const auto x = scalar(0.0);
  EXPECT_THROW(generalized_step(x, x, 10, 10, {}, x, s), DomainError);
  EXPECT_THROW(generalized_step(x, x, 10, 11, {}, x, s), DomainError);
  EXPECT_THROW(generalized_step(x, x, 10, 5, {1.5, false}, x, s), ConfigError);
}

TEST(StartState, ZeroNoiseAndOracleIdentity) {
  const auto s = sd();
  std::mt19937_64 rng(6);
  const auto y0 = randn(rng);
  const auto st = build_start_state(y0, Tensor<double>(y0.shape()), 250, s);
  for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_NEAR(st[i], std::sqrt(s.alpha_bar(250)) * y0[i], 1e-15);
  for (int trial = 0; trial < 100; ++trial) {
    for (int k : {250, 200, 150, 100}) {
      const auto x0 = randn(rng), y = randn(rng), xi = randn(rng);
      EXPECT_LE(max_abs_diff(build_start_state(y, oracle_start_noise(x0, y, xi, k, s), k, s), forward_sample(x0, k, xi, s)), 1e-10);
    }
  }
}

TEST(IntermediateState, MatchesForwardSample) {
  const auto s = sd();
  std::mt19937_64 rng(7);
  const auto x0 = randn(rng), xi = randn(rng);
  EXPECT_TRUE(intermediate_train_state(x0, xi, 123, s) == forward_sample(x0, 123, xi, s));
  const auto z = intermediate_train_state(x0, Tensor<double>(x0.shape()), 50, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], std::sqrt(s.alpha_bar(50)) * x0[i], 1e-15);
  const auto t81 = two_step(0.19, 0.5);
  EXPECT_NEAR(intermediate_train_state(scalar(1.0), scalar(2.0), 1, t81)[0], 1.7717798, 1e-7);
}

TEST(OracleStartNoise, Examples) {
  const auto s = two_step(0.5, 0.6);
  EXPECT_NEAR(oracle_start_noise(scalar(1.0), scalar(0.0), scalar(0.0), 1, s)[0], 1.0, 1e-15);
  std::mt19937_64 rng(8);
  const auto x0 = randn(rng), xi = randn(rng);
  EXPECT_TRUE(oracle_start_noise(x0, x0, xi, 250, sd()) == xi);
}

TEST(VarianceRecursion, MatchesOneMinusAlphaBar) {
  for (const auto& cfg : {ScheduleConfig::stable_diffusion(), ScheduleConfig::fast()}) {
    const auto s = build_schedule(cfg);
    double v = 0;
    for (int t = 1; t <= s.total_steps(); ++t) {
      v = s.alpha(t) * v + s.beta(t);
      ASSERT_LE(std::abs(v - (1 - s.alpha_bar(t))), 1e-12) << t;
    }
  }
}

TEST(MonteCarlo, IteratedKernelsMatchMarginal) {
  const auto s = build_schedule(ScheduleConfig::fast());
  const int t = s.total_steps() / 4, n = 10000;
  const double x0 = 0.7;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    double x = x0;
    for (int k = 1; k <= t; ++k) x = std::sqrt(s.alpha(k)) * x + std::sqrt(s.beta(k)) * nd(rng);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  const double want_var = 1 - s.alpha_bar(t);
  EXPECT_LE(std::abs(mean - std::sqrt(s.alpha_bar(t)) * x0), 4 * std::sqrt(want_var / n));
  EXPECT_LE(std::abs(var - want_var), 4 * want_var * std::sqrt(2.0 / (n - 1)));
}

TEST(OracleDenoiser, DeterministicSamplingRecoversTarget) {
  const auto s = sd();
  const auto plan = select_timesteps(s, 250, 5, SkipStrategy::trailing);
  std::mt19937_64 rng(10);
  const auto x0 = randn(rng), xi = randn(rng);
  for (int start : {250, 200, 150, 100}) {
    const auto sub = sub_plan(plan, start);
    for (int k = 1; k <= int(sub.size()); ++k) {
      const auto ts = select_steps(plan, start, k);
      Tensor<double> x = forward_sample(x0, start, xi, s);
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        x = generalized_step(x, oracle_epsilon(x, x0, ts[i], s), ts[i], prev, {0.0, false}, Tensor<double>{}, s);
      }
      EXPECT_LE(max_abs_diff(x, x0), 1e-6) << start << " k=" << k;
    }
  }
}

}  // namespace
