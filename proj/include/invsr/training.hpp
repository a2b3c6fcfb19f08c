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
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "invsr/degradation.hpp"
#include "invsr/diffusion.hpp"
#include "invsr/error.hpp"
#include "invsr/nn/networks.hpp"
#include "invsr/nn/ops.hpp"
#include "invsr/nn/params.hpp"
#include "invsr/nn/tape.hpp"
#include "invsr/parallel.hpp"
#include "invsr/rng.hpp"
#include "invsr/schedule.hpp"
#include "invsr/tensor.hpp"

namespace invsr {

struct LossWeights {
  double lambda_l = 2.0;  // perceptual proxy
  double lambda_g = 0.1;  // adversarial

  void validate() const {
    if (!(lambda_l >= 0 && std::isfinite(lambda_l))) throw ConfigError("training.weights.lambda_l must be finite and >= 0");
    if (!(lambda_g >= 0 && std::isfinite(lambda_g))) throw ConfigError("training.weights.lambda_g must be finite and >= 0");
  }
};

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 8;
  int iterations = 1000;
  double clip_norm = 1.0;  // global L2; <= 0 disables

  void validate() const {
    if (!(lr > 0 && std::isfinite(lr))) throw ConfigError("training.optimizer.lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("training.optimizer.beta1 must lie in [0,1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("training.optimizer.beta2 must lie in [0,1)");
    if (!(eps > 0)) throw ConfigError("training.optimizer.eps must be > 0");
    if (batch < 1) throw ConfigError("training.optimizer.batch must be >= 1");
    if (iterations < 0) throw ConfigError("training iterations must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Adam

/// First/second moments per parameter, kept in double.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

/// One bias-corrected Adam update from the gradients held in `store`.
template <class T>
void adam_update(nn::ParamStore<T>& store, AdamState& st, const OptimizerConfig& cfg) {
  if (st.m.empty()) {
    for (const auto& p : store) {
      st.m.emplace_back(p.value.size(), 0.0);
      st.v.emplace_back(p.value.size(), 0.0);
    }
  }
  if (st.m.size() != store.size()) throw ConfigError("adam_update: optimizer state does not match parameter store");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  std::size_t i = 0;
  for (auto& p : store) {
    auto& m = st.m[i];
    auto& v = st.v[i];
    ++i;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g;
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      p.value[k] = static_cast<T>(double(p.value[k]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

/// Global L2 norm of all gradients in the store.
template <class T>
double grad_norm(const nn::ParamStore<T>& store) {
  double s = 0;
  for (const auto& p : store)
    for (T g : p.grad.span()) s += double(g) * double(g);
  return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most max_norm; returns the norm before clipping.
template <class T>
double clip_grad_norm(nn::ParamStore<T>& store, double max_norm) {
  const double n = grad_norm(store);
  if (max_norm > 0 && n > max_norm) {
    const double k = max_norm / n;
    for (auto& p : store)
      for (T& g : p.grad.span()) g = static_cast<T>(g * k);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Losses

inline double hinge_d_loss(std::span<const double> real, std::span<const double> fake) {
  if (real.empty() || fake.empty()) throw DimensionError("hinge_d_loss: empty logits");
  double r = 0, f = 0;
  for (double x : real) r += std::max(0.0, 1.0 - x);
  for (double x : fake) f += std::max(0.0, 1.0 + x);
  return r / double(real.size()) + f / double(fake.size());
}

inline double hinge_g_loss(std::span<const double> fake) {
  if (fake.empty()) throw DimensionError("hinge_g_loss: empty logits");
  double f = 0;
  for (double x : fake) f += x;
  return -f / double(fake.size());
}

template <class T>
nn::Var hinge_d_loss(nn::Tape<T>& tape, nn::Var real, nn::Var fake) {
  using namespace nn;
  const Var r = mean_all(tape, relu(tape, affine(tape, real, T(-1), T(1))));
  const Var f = mean_all(tape, relu(tape, affine(tape, fake, T(1), T(1))));
  return add(tape, r, f);
}

template <class T>
nn::Var hinge_g_loss(nn::Tape<T>& tape, nn::Var fake) {
  return nn::affine(tape, nn::mean_all(tape, fake), T(-1), T(0));
}

inline constexpr int kPerceptualScales = 3;

/// Multiscale Sobel-magnitude distance on [0,1] images (full, 1/2, 1/4 resolution).
template <class T>
nn::Var perceptual_proxy(nn::Tape<T>& tape, nn::Var a, nn::Var b) {
  using namespace nn;
  require_same_shape(tape.value(a).shape(), tape.value(b).shape(), "perceptual_proxy");
  Var total;
  for (int s = 0; s < kPerceptualScales; ++s) {
    if (s > 0) {
      a = area_downsample2(tape, a);
      b = area_downsample2(tape, b);
    }
    const Var d = mse(tape, sobel_magnitude(tape, a), sobel_magnitude(tape, b));
    total = s == 0 ? d : add(tape, total, d);
  }
  return affine(tape, total, T(1.0 / kPerceptualScales), T(0));
}

template <class T>
double perceptual_proxy(const Tensor<T>& a, const Tensor<T>& b) {
  nn::Tape<T> tape;
  return double(tape.value(perceptual_proxy(tape, tape.constant(a), tape.constant(b)))[0]);
}

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite (" + std::to_string(v) + ")");
}

// ---------------------------------------------------------------------------
// Stage 1: denoiser pretraining

/// x_t for a batch with one timestep per item.
template <class T>
Tensor<T> forward_sample_batch(const Tensor<T>& x0, std::span<const int> ts, const Tensor<T>& xi, const NoiseSchedule& s) {
  require_same_shape(x0.shape(), xi.shape(), "forward_sample_batch");
  if (ts.size() != x0.batch()) throw DimensionError("forward_sample_batch: need one timestep per batch item");
  Tensor<T> out(x0.shape());
  const std::size_t per = x0.size() / x0.batch();
  for (std::size_t n = 0; n < x0.batch(); ++n) {
    const auto c = marginal_coeffs(s, ts[n]);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) out[i] = static_cast<T>(c.signal * x0[i] + c.noise * xi[i]);
  }
  return out;
}

/// Epsilon-matching loss for a given predictor, used by tests with oracle or trivial predictors.
template <class T, class EpsFn>
double ddpm_loss(const Tensor<T>& x0_signed, std::span<const int> ts, const Tensor<T>& xi, const NoiseSchedule& s, EpsFn&& eps_fn) {
  const Tensor<T> x_t = forward_sample_batch(x0_signed, ts, xi, s);
  const Tensor<T> eps = eps_fn(x_t, ts);
  require_same_shape(eps.shape(), xi.shape(), "ddpm_loss");
  double acc = 0;
  for (std::size_t i = 0; i < xi.size(); ++i) acc += (double(xi[i]) - double(eps[i])) * (double(xi[i]) - double(eps[i]));
  return acc / double(xi.size());
}

/// One optimizer step on the denoiser. `x0_unit` is a [0,1] batch; returns the loss before the update.
template <class T, class Rng>
double ddpm_pretrain_step(nn::ParamStore<T>& den, AdamState& adam, const nn::DenoiserSpec& spec, const Tensor<T>& x0_unit,
                          Rng& rng, const NoiseSchedule& s, const OptimizerConfig& opt) {
  using namespace nn;
  std::uniform_int_distribution<int> pick(1, s.total_steps());
  std::vector<int> ts(x0_unit.batch());
  for (int& t : ts) t = pick(rng);
  const Tensor<T> xi = normal_like<T>(x0_unit.shape(), rng);
  const Tensor<T> x_t = forward_sample_batch(to_signed(x0_unit), std::span<const int>(ts), xi, s);

  Tape<T> tape;
  const Var eps = denoiser_forward(tape, Binding<T>::trainable(den), spec, tape.constant(x_t), ts);
  const Var loss = mse(tape, eps, tape.constant(xi));
  const double value = double(tape.value(loss)[0]);
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "denoiser loss is not finite at optimizer step " << adam.step + 1 << " (timesteps:";
    for (int t : ts) os << ' ' << t;
    os << ")";
    throw NumericError(os.str());
  }
  den.zero_grad();
  tape.backward(loss);
  clip_grad_norm(den, opt.clip_norm);
  adam_update(den, adam, opt);
  return value;
}

// ---------------------------------------------------------------------------
// Stage 2: start-noise predictor training

/// Uniform draw from the training start set.
template <class Rng>
int sample_start(Rng& rng, std::span<const int> starts) {
  if (starts.empty()) throw ConfigError("plan.train_starts is empty");
  std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
  return starts[pick(rng)];
}

/// Epsilon model on the tape: (tape, x_t, timesteps) -> eps.
template <class T>
using EpsModel = std::function<nn::Var(nn::Tape<T>&, nn::Var, std::span<const int>)>;

template <class T>
EpsModel<T> frozen_denoiser(const nn::ParamStore<T>& den, const nn::DenoiserSpec& spec) {
  return [&den, spec](nn::Tape<T>& tape, nn::Var x, std::span<const int> ts) {
    return nn::denoiser_forward(tape, nn::Binding<T>::frozen(den), spec, x, ts);
  };
}

/// Start state from the noise f, one reverse evaluation, and the implied clean estimate (signed domain).
template <class T>
nn::Var x0_from_start_noise(nn::Tape<T>& tape, nn::Var y_signed, nn::Var f, int t, const NoiseSchedule& s, const EpsModel<T>& eps) {
  using namespace nn;
  const auto c = marginal_coeffs(s, t);
  const Var x_t = axpby(tape, T(c.signal), y_signed, T(c.noise), f);
  const std::vector<int> ts(tape.value(y_signed).batch(), t);
  const Var e = eps(tape, x_t, ts);
  return axpby(tape, T(1.0 / c.signal), x_t, T(-c.noise / c.signal), e);
}

/// Raw (unweighted) loss terms of one generator pass.
struct LossBreakdown {
  double total = 0;
  double l2 = 0;
  double perc = 0;
  double gan = 0;
  double d_loss = 0;
  int t = 0;
};

struct GeneratorLoss {
  nn::Var total, l2, perc, gan;
  bool has_gan = false;
};

/// total = L2 + lambda_l * perceptual + lambda_g * hinge_g, with L2 and perceptual on [0,1] images.
/// `disc` may be null, which drops the adversarial term.
template <class T>
GeneratorLoss generator_loss(nn::Tape<T>& tape, nn::Var x0hat_signed, nn::Var x0_signed, const LossWeights& w,
                             const nn::ParamStore<T>* disc, const nn::DiscriminatorSpec& dspec) {
  using namespace nn;
  GeneratorLoss g;
  const Var a = affine(tape, x0hat_signed, T(0.5), T(0.5));
  const Var b = affine(tape, x0_signed, T(0.5), T(0.5));
  g.l2 = mse(tape, a, b);
  g.total = g.l2;
  if (w.lambda_l > 0) {
    g.perc = perceptual_proxy(tape, a, b);
    g.total = axpby(tape, T(1), g.total, T(w.lambda_l), g.perc);
  }
  if (disc != nullptr && w.lambda_g > 0) {
    g.gan = hinge_g_loss(tape, discriminator_forward(tape, Binding<T>::frozen(*disc), dspec, x0hat_signed));
    g.total = axpby(tape, T(1), g.total, T(w.lambda_g), g.gan);
    g.has_gan = true;
  }
  return g;
}

struct InverterModels {
  nn::ParamStore<float>& predictor;
  const nn::ParamStore<float>& denoiser;
  nn::ParamStore<float>& discriminator;
  nn::PredictorSpec pspec;
  nn::DenoiserSpec dspec;
  nn::DiscriminatorSpec cspec;
};

struct InverterOptim {
  AdamState predictor;
  AdamState discriminator;
};

/// One predictor update (plus one discriminator update when the adversarial term is active).
/// x0_unit and y0_unit are [0,1] batches of HR targets and upsampled LR inputs.
template <class Rng>
LossBreakdown inversion_train_step(InverterModels& m, InverterOptim& optim, const Tensor<float>& x0_unit,
                                   const Tensor<float>& y0_unit, Rng& rng, const TimestepPlan& plan, const NoiseSchedule& s,
                                   const LossWeights& w, const OptimizerConfig& opt, bool gan_active) {
  using namespace nn;
  require_same_shape(x0_unit.shape(), y0_unit.shape(), "inversion_train_step");
  LossBreakdown out;
  out.t = sample_start(rng, std::span<const int>(plan.train_starts));
  const std::vector<int> ts(x0_unit.batch(), out.t);
  const Tensor<float> xi = normal_like<float>(x0_unit.shape(), rng);

  Tape<float> tape;
  const Var y = tape.constant(to_signed(y0_unit));
  const Var x0 = tape.constant(to_signed(x0_unit));
  const auto pv = predictor_forward(tape, Binding<float>::trainable(m.predictor), m.pspec, y, ts);
  const Var f = reparameterize(tape, pv.mean, pv.logvar, tape.constant(xi));
  const Var x0hat = x0_from_start_noise(tape, y, f, out.t, s, frozen_denoiser(m.denoiser, m.dspec));
  const bool use_gan = gan_active && w.lambda_g > 0;
  const auto g = generator_loss(tape, x0hat, x0, w, use_gan ? &m.discriminator : nullptr, m.cspec);

  out.total = tape.value(g.total)[0];
  out.l2 = tape.value(g.l2)[0];
  if (w.lambda_l > 0) out.perc = tape.value(g.perc)[0];
  if (g.has_gan) out.gan = tape.value(g.gan)[0];
  require_finite(out.total, "inverter loss at t=" + std::to_string(out.t));

  m.predictor.zero_grad();
  tape.backward(g.total);
  for (const auto& p : m.denoiser)
    for (float v : p.grad.span())
      if (v != 0.0f) throw NumericError("frozen denoiser received a gradient in '" + p.name + "'");
  clip_grad_norm(m.predictor, opt.clip_norm);
  adam_update(m.predictor, optim.predictor, opt);

  if (use_gan) {
    Tape<float> dt;
    const auto bind = Binding<float>::trainable(m.discriminator);
    const Var real = discriminator_forward(dt, bind, m.cspec, dt.constant(tape.value(x0)));
    const Var fake = discriminator_forward(dt, bind, m.cspec, dt.constant(tape.value(x0hat)));
    const Var d = hinge_d_loss(dt, real, fake);
    out.d_loss = dt.value(d)[0];
    require_finite(out.d_loss, "discriminator loss");
    m.discriminator.zero_grad();
    dt.backward(d);
    clip_grad_norm(m.discriminator, opt.clip_norm);
    adam_update(m.discriminator, optim.discriminator, opt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

struct TrainLogRow {
  int iter = 0;
  double loss_total = 0;
  double loss_l2 = 0;
  double loss_perc = 0;  // weighted by lambda_l
  double loss_gan = 0;   // weighted by lambda_g
  double d_loss = 0;
  double lr = 0;
  double seconds = 0;
};

inline std::string train_log_header() { return "iter,loss_total,loss_l2,loss_perc,loss_gan,d_loss,lr,seconds"; }

inline std::string to_csv(const TrainLogRow& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.iter << ',' << r.loss_total << ',' << r.loss_l2 << ',' << r.loss_perc << ',' << r.loss_gan << ',' << r.d_loss << ','
     << r.lr << ',' << r.seconds;
  return os.str();
}

struct TrainLoopConfig {
  OptimizerConfig opt;
  std::uint64_t seed = 0;
  int crop = 0;        // random square crop of HR images; 0 keeps full size
  int gan_warmup = 0;  // iterations before the adversarial term is switched on
  int jobs = 1;        // workers for batch synthesis
};

using LogSink = std::function<void(const TrainLogRow&)>;

namespace detail {

/// Crop of one HR image at a random offset (full image when crop == 0).
template <class Rng>
Tensor<float> random_crop(const Tensor<float>& img, int crop, Rng& rng) {
  if (crop <= 0 || std::size_t(crop) == img.height()) return img;
  if (std::size_t(crop) > img.height() || std::size_t(crop) > img.width()) {
    throw ConfigError("training.crop " + std::to_string(crop) + " exceeds image size " + img.shape().str());
  }
  std::uniform_int_distribution<std::size_t> oy(0, img.height() - std::size_t(crop)), ox(0, img.width() - std::size_t(crop));
  const std::size_t y0 = oy(rng), x0 = ox(rng), C = img.channels(), c = std::size_t(crop);
  Tensor<float> out(Shape{1, C, c, c});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t y = 0; y < c; ++y)
      for (std::size_t x = 0; x < c; ++x) out.at(0, ch, y, x) = img.at(0, ch, y0 + y, x0 + x);
  return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Epsilon-matching pretraining on random crops of `images` ([1,C,S,S] each, [0,1]).
inline std::vector<TrainLogRow> train_denoiser(nn::ParamStore<float>& den, const nn::DenoiserSpec& spec, const NoiseSchedule& s,
                                               std::span<const Tensor<float>> images, const TrainLoopConfig& cfg,
                                               const LogSink& sink = {}) {
  cfg.opt.validate();
  if (images.empty()) throw ConfigError("train_denoiser: no training images");
  std::mt19937_64 rng(derive_seed(cfg.seed, "denoiser-train"));
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  AdamState adam;
  std::vector<TrainLogRow> log;
  const auto t0 = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.opt.iterations; ++it) {
    std::vector<Tensor<float>> batch;
    for (int b = 0; b < cfg.opt.batch; ++b) batch.push_back(detail::random_crop(images[pick(rng)], cfg.crop, rng));
    const Tensor<float> x0 = stack_batch(std::span<const Tensor<float>>(batch));
    const double loss = ddpm_pretrain_step(den, adam, spec, x0, rng, s, cfg.opt);
    TrainLogRow row{it, loss, loss, 0, 0, 0, cfg.opt.lr, detail::seconds_since(t0)};
    log.push_back(row);
    if (sink) sink(row);
  }
  return log;
}

/// HR/LR batch for one inverter iteration. Degradation seeds depend only on (seed, iteration, slot).
template <class Rng>
std::pair<Tensor<float>, Tensor<float>> inverter_batch(std::span<const Tensor<float>> images, const DegradationConfig& deg,
                                                       const TrainLoopConfig& cfg, int iteration, Rng& rng) {
  const std::size_t B = std::size_t(cfg.opt.batch);
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  std::vector<Tensor<float>> hr(B), lr(B);
  for (auto& h : hr) h = detail::random_crop(images[pick(rng)], cfg.crop, rng);
  const std::uint64_t base = derive_seed(cfg.seed, "degrade");
  parallel_for(B, cfg.jobs, [&](std::size_t b) {
    lr[b] = degrade(hr[b], deg, derive_seed(base, std::uint64_t(iteration) * B + b)).lr_up;
  });
  return {stack_batch(std::span<const Tensor<float>>(hr)), stack_batch(std::span<const Tensor<float>>(lr))};
}

/// Trains predictor (and discriminator) against the frozen denoiser.
inline std::vector<TrainLogRow> train_inverter(InverterModels& m, const NoiseSchedule& s, const TimestepPlan& plan,
                                               std::span<const Tensor<float>> images, const DegradationConfig& deg,
                                               const LossWeights& w, const TrainLoopConfig& cfg, const LogSink& sink = {}) {
  cfg.opt.validate();
  w.validate();
  deg.validate();
  if (images.empty()) throw ConfigError("train_inverter: no training images");
  std::mt19937_64 rng(derive_seed(cfg.seed, "inverter-train"));
  InverterOptim optim;
  std::vector<TrainLogRow> log;
  const auto t0 = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.opt.iterations; ++it) {
    const auto [x0, y0] = inverter_batch(images, deg, cfg, it, rng);
    const auto l = inversion_train_step(m, optim, x0, y0, rng, plan, s, w, cfg.opt, it >= cfg.gan_warmup);
    TrainLogRow row{it, l.total, l.l2, w.lambda_l * l.perc, w.lambda_g * l.gan, l.d_loss, cfg.opt.lr, detail::seconds_since(t0)};
    log.push_back(row);
    if (sink) sink(row);
  }
  return log;
}

}  // namespace invsr
