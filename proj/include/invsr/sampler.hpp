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
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "invsr/diffusion.hpp"
#include "invsr/error.hpp"
#include "invsr/nn/networks.hpp"
#include "invsr/parallel.hpp"
#include "invsr/rng.hpp"
#include "invsr/schedule.hpp"
#include "invsr/tensor.hpp"

namespace invsr {

/// (y0 in [-1,1], t) -> (mean, logvar) of the start noise.
template <class T>
using NoisePredictor = std::function<std::pair<Tensor<T>, Tensor<T>>(const Tensor<T>&, int)>;

/// (x_t, t) -> eps estimate.
template <class T>
using Denoiser = std::function<Tensor<T>(const Tensor<T>&, int)>;

template <class T>
NoisePredictor<T> network_predictor(const nn::ParamStore<T>& p, const nn::PredictorSpec& spec) {
  return [&p, spec](const Tensor<T>& y, int t) { return nn::predictor_forward(p, spec, y, t); };
}

template <class T>
Denoiser<T> network_denoiser(const nn::ParamStore<T>& d, const nn::DenoiserSpec& spec) {
  return [&d, spec](const Tensor<T>& x, int t) { return nn::denoiser_forward(d, spec, x, t); };
}

template <class T>
struct InferenceRequest {
  Tensor<T> y0;  // upsampled LR image in [0,1], [N,C,H,W]
  int start = 0;
  int steps = 1;
  SamplerConfig sampler{};
  std::uint64_t seed = 0;
  bool dump_noise = false;
};

template <class T>
struct InferenceResult {
  Tensor<T> x0;                      // [0,1]
  std::vector<int> timesteps;        // visited, descending
  std::optional<Tensor<T>> noise;    // mean of f, normalized to [0,1]
  double noise_min = 0;
  double noise_max = 0;
};

namespace detail {

template <class T>
void require_finite_state(const Tensor<T>& x, int t) {
  if (!x.all_finite()) throw NumericError("non-finite sampler state at t=" + std::to_string(t));
}

}  // namespace detail

/// Start state from predicted noise, then `steps` reverse updates down to t = 0.
/// The predictor runs once and the denoiser exactly `steps` times.
template <class T>
InferenceResult<T> invert(const InferenceRequest<T>& req, const NoisePredictor<T>& predictor, const Denoiser<T>& denoiser,
                          const NoiseSchedule& s, const TimestepPlan& plan) {
  if (plan.largest() > s.total_steps()) throw ConfigError("plan exceeds the model schedule length T");
  InferenceResult<T> out;
  out.timesteps = select_steps(plan, req.start, req.steps);
  std::mt19937_64 rng(req.seed);
  const Tensor<T> y = to_signed(req.y0);
  const auto [mean, logvar] = predictor(y, req.start);
  const Tensor<T> xi = normal_like<T>(y.shape(), rng);
  Tensor<T> x = build_start_state(y, nn::reparameterize(mean, logvar, xi), req.start, s);
  detail::require_finite_state(x, req.start);
  for (std::size_t i = 0; i < out.timesteps.size(); ++i) {
    const int t = out.timesteps[i];
    const int t_prev = i + 1 < out.timesteps.size() ? out.timesteps[i + 1] : 0;
    const Tensor<T> eps = denoiser(x, t);
    const bool noisy = req.sampler.eta > 0 && (t_prev > 0 || req.sampler.final_step_noise);
    const Tensor<T> z = noisy ? normal_like<T>(x.shape(), rng) : Tensor<T>{};
    x = generalized_step(x, eps, t, t_prev, req.sampler, z, s);
    detail::require_finite_state(x, t_prev);
  }
  out.x0 = clipped(to_unit(x), T(0), T(1));
  if (req.dump_noise) {
    const auto [lo, hi] = std::minmax_element(mean.span().begin(), mean.span().end());
    out.noise_min = *lo;
    out.noise_max = *hi;
    const double span = out.noise_max - out.noise_min;
    Tensor<T> img(mean.shape());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = span > 0 ? T((mean[i] - out.noise_min) / span) : T(0.5);
    out.noise = std::move(img);
  }
  return out;
}

/// One input of a batch run.
struct BatchItem {
  std::string id;
  std::function<Tensor<float>()> load;  // y0 in [0,1]; may throw
};

struct BatchOutcome {
  std::string id;
  std::optional<InferenceResult<float>> result;
  std::string error;
  std::uint64_t seed = 0;
  double seconds = 0;
};

/// Per-item seeds come from (global seed, item id); failures are recorded per item.
inline std::vector<BatchOutcome> batch_infer(const std::vector<BatchItem>& items, const InferenceRequest<float>& tmpl,
                                             const NoisePredictor<float>& predictor, const Denoiser<float>& denoiser,
                                             const NoiseSchedule& s, const TimestepPlan& plan, int jobs = 1) {
  std::vector<BatchOutcome> out(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    auto& o = out[i];
    o.id = items[i].id;
    o.seed = derive_seed(tmpl.seed, items[i].id);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      InferenceRequest<float> req = tmpl;
      req.y0 = items[i].load();
      req.seed = o.seed;
      o.result = invert(req, predictor, denoiser, s, plan);
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  return out;
}

}  // namespace invsr
