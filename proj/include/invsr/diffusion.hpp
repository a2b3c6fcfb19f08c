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

#include <cmath>

#include "invsr/error.hpp"
#include "invsr/schedule.hpp"
#include "invsr/tensor.hpp"

namespace invsr {

struct SamplerConfig {
  double eta = 1.0;
  bool final_step_noise = false;
};

/// Coefficients of the marginal x_t = signal * x0 + noise * xi.
struct MarginalCoeffs {
  double signal;
  double noise;
};

inline MarginalCoeffs marginal_coeffs(const NoiseSchedule& s, int t) {
  const double ab = s.alpha_bar(t);
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

/// Coefficients of one generalized reverse step t -> t_prev:
///   x_prev = x0_coef * x0_hat + eps_coef * eps_hat + sigma * z.
struct StepCoeffs {
  double x0_coef;
  double eps_coef;
  double sigma;
};

inline StepCoeffs step_coeffs(const NoiseSchedule& s, int t, int t_prev, const SamplerConfig& cfg) {
  if (!(0 <= t_prev && t_prev < t)) {
    throw DomainError("reverse step needs 0 <= t_prev < t (got t=" + std::to_string(t) + ", t_prev=" + std::to_string(t_prev) + ")");
  }
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw ConfigError("sampler.eta must lie in [0,1]");
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t_prev);
  double sigma = cfg.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
  if (t_prev == 0 && !cfg.final_step_noise) sigma = 0.0;
  const double dir = 1.0 - ab_prev - sigma * sigma;
  // Rounding can leave -1e-17 when eta = 1 and t_prev = 0.
  if (dir < -1e-12) throw ConfigError("reverse step: 1 - abar_prev - sigma^2 < 0");
  return {std::sqrt(ab_prev), std::sqrt(std::max(dir, 0.0)), sigma};
}

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) xi.
template <class T>
Tensor<T> forward_sample(const Tensor<T>& x0, int t, const Tensor<T>& xi, const NoiseSchedule& s) {
  require_same_shape(x0.shape(), xi.shape(), "forward_sample");
  const auto c = marginal_coeffs(s, t);
  return axpby(c.signal, x0, c.noise, xi);
}

/// (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
template <class T>
Tensor<T> predict_x0(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& s) {
  require_same_shape(x_t.shape(), eps_hat.shape(), "predict_x0");
  const auto c = marginal_coeffs(s, t);
  if (c.signal == 0.0) throw NumericError("predict_x0: alpha_bar is zero");
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>((double(x_t[i]) - c.noise * double(eps_hat[i])) / c.signal);
  }
  return out;
}

/// Generalized (eta-family) reverse step from t to t_prev. With eta = 1 and
/// t_prev = t - 1 this is the ancestral update with posterior variance; with
/// eta = 0 it is deterministic and ignores z.
template <class T>
Tensor<T> generalized_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, int t_prev, const SamplerConfig& cfg,
                           const Tensor<T>& z, const NoiseSchedule& s) {
  require_same_shape(x_t.shape(), eps_hat.shape(), "generalized_step");
  const auto k = step_coeffs(s, t, t_prev, cfg);
  const Tensor<T> x0_hat = predict_x0(x_t, eps_hat, t, s);
  Tensor<T> out = axpby(k.x0_coef, x0_hat, k.eps_coef, eps_hat);
  if (k.sigma != 0.0) {
    require_same_shape(x_t.shape(), z.shape(), "generalized_step noise");
    const T sg = static_cast<T>(k.sigma);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sg * z[i];
  }
  return out;
}

/// Start state from the LR image and a predicted noise map (not required to be zero-mean).
template <class T>
Tensor<T> build_start_state(const Tensor<T>& y0, const Tensor<T>& noise, int kappa, const NoiseSchedule& s) {
  require_same_shape(y0.shape(), noise.shape(), "build_start_state");
  const auto c = marginal_coeffs(s, kappa);
  return axpby(c.signal, y0, c.noise, noise);
}

/// Training-time state for a non-starting step: forward marginal with a fresh xi.
template <class T>
Tensor<T> intermediate_train_state(const Tensor<T>& x0, const Tensor<T>& xi, int kappa, const NoiseSchedule& s) {
  return forward_sample(x0, kappa, xi, s);
}

/// Noise map that makes the LR start state coincide with the HR marginal:
/// xi + snr(kappa) (x0 - y0).
template <class T>
Tensor<T> oracle_start_noise(const Tensor<T>& x0, const Tensor<T>& y0, const Tensor<T>& xi, int kappa,
                             const NoiseSchedule& s) {
  require_same_shape(x0.shape(), y0.shape(), "oracle_start_noise");
  require_same_shape(x0.shape(), xi.shape(), "oracle_start_noise");
  const double r = s.snr(kappa);
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(double(xi[i]) + r * (double(x0[i]) - double(y0[i])));
  return out;
}

/// Noise estimate of a denoiser that knows the clean image exactly.
template <class T>
Tensor<T> oracle_epsilon(const Tensor<T>& x_t, const Tensor<T>& x0, int t, const NoiseSchedule& s) {
  require_same_shape(x_t.shape(), x0.shape(), "oracle_epsilon");
  const auto c = marginal_coeffs(s, t);
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((double(x_t[i]) - c.signal * double(x0[i])) / c.noise);
  return out;
}

}  // namespace invsr
