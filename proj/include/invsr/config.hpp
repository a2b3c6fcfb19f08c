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

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invsr/data.hpp"
#include "invsr/degradation.hpp"
#include "invsr/diffusion.hpp"
#include "invsr/error.hpp"
#include "invsr/nn/networks.hpp"
#include "invsr/schedule.hpp"
#include "invsr/training.hpp"

namespace invsr {

struct PlanConfig {
  int cap = 250;  // N
  int steps = 5;  // M
  SkipStrategy strategy = SkipStrategy::trailing;
  std::vector<int> train_starts;  // empty: plan minus its smallest step
  double snr_floor = kDefaultSnrFloor;
};

struct DataConfig {
  std::size_t count = 512;
  std::size_t size = 64;
  double split_fraction = 0.9375;  // 480 train / 32 held out
};

struct TrainingConfig {
  OptimizerConfig opt{};
  LossWeights weights{};
  int denoiser_iterations = 3000;
  int inverter_iterations = 1500;
  int crop = 0;
  int gan_warmup = 0;
};

struct InferConfig {
  int start = 0;  // 0: second-largest plan step
  int steps = 1;
  SamplerConfig sampler{};
};

struct IoConfig {
  std::string data_dir = "data";
  std::string run_dir = "runs";
  std::string denoiser_ckpt = "runs/denoiser.ivsr";
  std::string inverter_ckpt = "runs/inverter.ivsr";
};

/// Full pipeline configuration. JSON keys mirror the member names.
struct RunConfig {
  std::uint64_t seed = 0;
  ScheduleConfig schedule{};
  PlanConfig plan{};
  nn::DenoiserSpec denoiser{};
  nn::PredictorSpec predictor{};
  nn::DiscriminatorSpec discriminator{};
  DegradationConfig degradation{};
  DataConfig data{};
  TrainingConfig training{};
  InferConfig infer{};
  IoConfig io{};

  /// T = 100 linear schedule with the plan scaled by 1/10 and narrow networks.
  static RunConfig fast() {
    RunConfig c;
    c.schedule = ScheduleConfig::fast();
    c.plan.cap = 25;
    c.denoiser.base_channels = 16;
    c.denoiser.time_dim = 64;
    c.predictor.base_channels = 16;
    c.predictor.time_dim = 64;
    c.discriminator.base_channels = 16;
    return c;
  }

  int default_start(const TimestepPlan& p) const {
    if (infer.start > 0) return infer.start;
    return p.size() > 1 ? p.kappas[1] : p.kappas[0];
  }

  /// Cross-checks between sections; throws ConfigError naming the key.
  void validate() const;
};

inline NoiseSchedule make_schedule(const RunConfig& c) { return build_schedule(c.schedule); }

inline TimestepPlan make_plan(const RunConfig& c, const NoiseSchedule& s) {
  TimestepPlan p = select_timesteps(s, c.plan.cap, c.plan.steps, c.plan.strategy, c.plan.snr_floor);
  if (!c.plan.train_starts.empty()) {
    for (int t : c.plan.train_starts)
      if (!p.contains(t)) throw ConfigError("plan.train_starts: " + std::to_string(t) + " is not a plan timestep");
    p.train_starts = c.plan.train_starts;
    std::sort(p.train_starts.rbegin(), p.train_starts.rend());
  }
  if (p.train_starts.empty()) throw ConfigError("plan.train_starts is empty (plan has a single step)");
  return p;
}

inline void RunConfig::validate() const {
  const auto s = make_schedule(*this);
  const auto p = make_plan(*this, s);
  degradation.validate();
  training.opt.validate();
  training.weights.validate();
  if (data.size == 0 || data.size % 4) throw ConfigError("data.size must be a positive multiple of 4");
  if (data.size % std::size_t(degradation.scale)) throw ConfigError("data.size must be divisible by degradation.scale");
  if (training.crop < 0 || std::size_t(training.crop) > data.size) throw ConfigError("training.crop must lie in [0, data.size]");
  if (training.crop > 0 && (training.crop % 4 || training.crop % degradation.scale)) {
    throw ConfigError("training.crop must be divisible by 4 and by degradation.scale");
  }
  if (training.denoiser_iterations < 0) throw ConfigError("training.denoiser_iterations must be >= 0");
  if (training.inverter_iterations < 0) throw ConfigError("training.inverter_iterations must be >= 0");
  if (training.gan_warmup < 0) throw ConfigError("training.gan_warmup must be >= 0");
  if (infer.start != 0 && !p.contains(infer.start)) throw ConfigError("infer.start: " + std::to_string(infer.start) + " is not in the plan");
  if (infer.steps < 1) throw ConfigError("infer.steps must be >= 1");
  if (!(infer.sampler.eta >= 0 && infer.sampler.eta <= 1)) throw ConfigError("infer.eta must lie in [0,1]");
  if (denoiser.base_channels < 1 || predictor.base_channels < 1 || discriminator.base_channels < 1) {
    throw ConfigError("model base_channels must be >= 1");
  }
  if (denoiser.time_dim % 2 || predictor.time_dim % 2) throw ConfigError("model time_dim must be even");
  (void)nn::denoiser_decls(denoiser);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

/// Reads one object section, rejecting keys it was not asked about.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }
  ~Section() = default;

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + name(key) + "': " + e.what());
    }
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), name(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + name(k) + "'");
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Range range_from(const std::vector<double>& v, const std::string& key) {
  if (v.size() != 2) throw ConfigError("config key '" + key + "' must be a [lo, hi] pair");
  return {v[0], v[1]};
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  return json{
      {"seed", c.seed},
      {"schedule",
       {{"T", c.schedule.total_steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end},
        {"kind", to_string(c.schedule.kind)}}},
      {"plan",
       {{"N", c.plan.cap}, {"M", c.plan.steps}, {"strategy", to_string(c.plan.strategy)}, {"train_starts", c.plan.train_starts},
        {"snr_floor", c.plan.snr_floor}}},
      {"denoiser",
       {{"base_channels", c.denoiser.base_channels}, {"channel_mults", c.denoiser.channel_mults}, {"res_blocks", c.denoiser.res_blocks},
        {"time_dim", c.denoiser.time_dim}, {"groups", c.denoiser.groups}}},
      {"predictor",
       {{"base_channels", c.predictor.base_channels}, {"time_dim", c.predictor.time_dim}, {"groups", c.predictor.groups},
        {"logvar_min", c.predictor.logvar_min}, {"logvar_max", c.predictor.logvar_max}}},
      {"discriminator", {{"base_channels", c.discriminator.base_channels}, {"leaky_slope", c.discriminator.leaky_slope}}},
      {"degradation",
       {{"scale", c.degradation.scale}, {"blur_sigma", {c.degradation.blur_sigma.lo, c.degradation.blur_sigma.hi}},
        {"noise_sigma", {c.degradation.noise_sigma.lo, c.degradation.noise_sigma.hi}},
        {"jpeg_quality", c.degradation.jpeg_quality}, {"jpeg_prob", c.degradation.jpeg_prob}}},
      {"data", {{"count", c.data.count}, {"size", c.data.size}, {"split_fraction", c.data.split_fraction}}},
      {"training",
       {{"lr", c.training.opt.lr}, {"beta1", c.training.opt.beta1}, {"beta2", c.training.opt.beta2}, {"eps", c.training.opt.eps},
        {"batch", c.training.opt.batch}, {"clip_norm", c.training.opt.clip_norm}, {"lambda_l", c.training.weights.lambda_l},
        {"lambda_g", c.training.weights.lambda_g}, {"denoiser_iterations", c.training.denoiser_iterations},
        {"inverter_iterations", c.training.inverter_iterations}, {"crop", c.training.crop}, {"gan_warmup", c.training.gan_warmup}}},
      {"infer",
       {{"start", c.infer.start}, {"steps", c.infer.steps}, {"eta", c.infer.sampler.eta},
        {"final_step_noise", c.infer.sampler.final_step_noise}}},
      {"io",
       {{"data_dir", c.io.data_dir}, {"run_dir", c.io.run_dir}, {"denoiser_ckpt", c.io.denoiser_ckpt},
        {"inverter_ckpt", c.io.inverter_ckpt}}},
  };
}

/// Overlays `j` onto `base`. Unknown keys are rejected; the result is validated.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  detail::Section root(j, "");
  root.get("seed", c.seed);
  if (auto s = root.sub("schedule")) {
    std::string kind = to_string(c.schedule.kind);
    s->get("T", c.schedule.total_steps);
    s->get("beta_start", c.schedule.beta_start);
    s->get("beta_end", c.schedule.beta_end);
    s->get("kind", kind);
    c.schedule.kind = parse_beta_kind(kind);
    s->finish();
  }
  if (auto s = root.sub("plan")) {
    std::string strategy = to_string(c.plan.strategy);
    s->get("N", c.plan.cap);
    s->get("M", c.plan.steps);
    s->get("strategy", strategy);
    s->get("train_starts", c.plan.train_starts);
    s->get("snr_floor", c.plan.snr_floor);
    c.plan.strategy = parse_skip_strategy(strategy);
    s->finish();
  }
  if (auto s = root.sub("denoiser")) {
    s->get("base_channels", c.denoiser.base_channels);
    s->get("channel_mults", c.denoiser.channel_mults);
    s->get("res_blocks", c.denoiser.res_blocks);
    s->get("time_dim", c.denoiser.time_dim);
    s->get("groups", c.denoiser.groups);
    s->finish();
  }
  if (auto s = root.sub("predictor")) {
    s->get("base_channels", c.predictor.base_channels);
    s->get("time_dim", c.predictor.time_dim);
    s->get("groups", c.predictor.groups);
    s->get("logvar_min", c.predictor.logvar_min);
    s->get("logvar_max", c.predictor.logvar_max);
    s->finish();
  }
  if (auto s = root.sub("discriminator")) {
    s->get("base_channels", c.discriminator.base_channels);
    s->get("leaky_slope", c.discriminator.leaky_slope);
    s->finish();
  }
  if (auto s = root.sub("degradation")) {
    std::vector<double> blur{c.degradation.blur_sigma.lo, c.degradation.blur_sigma.hi};
    std::vector<double> noise{c.degradation.noise_sigma.lo, c.degradation.noise_sigma.hi};
    s->get("scale", c.degradation.scale);
    s->get("blur_sigma", blur);
    s->get("noise_sigma", noise);
    s->get("jpeg_quality", c.degradation.jpeg_quality);
    s->get("jpeg_prob", c.degradation.jpeg_prob);
    c.degradation.blur_sigma = detail::range_from(blur, "degradation.blur_sigma");
    c.degradation.noise_sigma = detail::range_from(noise, "degradation.noise_sigma");
    s->finish();
  }
  if (auto s = root.sub("data")) {
    s->get("count", c.data.count);
    s->get("size", c.data.size);
    s->get("split_fraction", c.data.split_fraction);
    s->finish();
  }
  if (auto s = root.sub("training")) {
    s->get("lr", c.training.opt.lr);
    s->get("beta1", c.training.opt.beta1);
    s->get("beta2", c.training.opt.beta2);
    s->get("eps", c.training.opt.eps);
    s->get("batch", c.training.opt.batch);
    s->get("clip_norm", c.training.opt.clip_norm);
    s->get("lambda_l", c.training.weights.lambda_l);
    s->get("lambda_g", c.training.weights.lambda_g);
    s->get("denoiser_iterations", c.training.denoiser_iterations);
    s->get("inverter_iterations", c.training.inverter_iterations);
    s->get("crop", c.training.crop);
    s->get("gan_warmup", c.training.gan_warmup);
    s->finish();
  }
  if (auto s = root.sub("infer")) {
    s->get("start", c.infer.start);
    s->get("steps", c.infer.steps);
    s->get("eta", c.infer.sampler.eta);
    s->get("final_step_noise", c.infer.sampler.final_step_noise);
    s->finish();
  }
  if (auto s = root.sub("io")) {
    s->get("data_dir", c.io.data_dir);
    s->get("run_dir", c.io.run_dir);
    s->get("denoiser_ckpt", c.io.denoiser_ckpt);
    s->get("inverter_ckpt", c.io.inverter_ckpt);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
inline std::string config_digest(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Seed precedence: command-line flag, then config file, then INVSR_SEED, then 0.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> file, const char* env) {
  if (flag) return *flag;
  if (file) return *file;
  if (env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError("INVSR_SEED must be a non-negative integer (got '" + std::string(env) + "')");
    return v;
  }
  return 0;
}

}  // namespace invsr
