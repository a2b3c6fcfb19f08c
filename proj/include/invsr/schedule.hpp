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
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "invsr/error.hpp"

namespace invsr {

enum class BetaKind { linear, scaled_linear };

inline BetaKind parse_beta_kind(std::string_view s) {
  if (s == "linear") return BetaKind::linear;
  if (s == "scaled_linear") return BetaKind::scaled_linear;
  throw ConfigError("schedule.kind: unknown beta schedule '" + std::string(s) + "'");
}

inline std::string to_string(BetaKind k) { return k == BetaKind::linear ? "linear" : "scaled_linear"; }

struct ScheduleConfig {
  int total_steps = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;
  BetaKind kind = BetaKind::scaled_linear;

  /// Stable-Diffusion default: SNR(250) ~= 1.44.
  static ScheduleConfig stable_diffusion() { return {}; }
  /// Short profile for fast tests; plan cap and timesteps scale by 1/10.
  static ScheduleConfig fast() { return {100, 0.0085, 0.06, BetaKind::linear}; }
};

/// Tabulated beta / alpha / alpha-bar for a T-step diffusion, double precision.
/// Index t runs over 1..T; alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  int total_steps() const { return static_cast<int>(betas_.size()) - 1; }

  double beta(int t) const { return betas_.at(check(t, 1)); }
  double alpha(int t) const { return alphas_.at(check(t, 1)); }
  double alpha_bar(int t) const { return alpha_bars_.at(check(t, 0)); }

  /// Amplitude SNR sqrt(abar) / sqrt(1 - abar).
  double snr(int t) const {
    check(t, 1);
    const double ab = alpha_bars_[t];
    return std::sqrt(ab) / std::sqrt(1.0 - ab);
  }

  const ScheduleConfig& config() const { return cfg_; }

  friend NoiseSchedule build_schedule(const ScheduleConfig& cfg);

 private:
  std::size_t check(int t, int lo) const {
    if (t < lo || t > total_steps()) {
      throw DomainError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                        std::to_string(total_steps()) + "]");
    }
    return static_cast<std::size_t>(t);
  }

  ScheduleConfig cfg_;
  // Slot 0 of betas_/alphas_ is unused padding so that indices match t.
  std::vector<double> betas_, alphas_, alpha_bars_;
};

inline NoiseSchedule build_schedule(const ScheduleConfig& cfg) {
  if (cfg.total_steps < 2) throw ConfigError("schedule.T: need at least 2 steps");
  if (!(cfg.beta_start > 0.0 && cfg.beta_start < cfg.beta_end && cfg.beta_end < 1.0)) {
    throw ConfigError("schedule.beta_start/beta_end: need 0 < beta_start < beta_end < 1");
  }
  const int T = cfg.total_steps;
  NoiseSchedule s;
  s.cfg_ = cfg;
  s.betas_.assign(T + 1, 0.0);
  s.alphas_.assign(T + 1, 1.0);
  s.alpha_bars_.assign(T + 1, 1.0);
  const double r0 = std::sqrt(cfg.beta_start), r1 = std::sqrt(cfg.beta_end);
  for (int t = 1; t <= T; ++t) {
    const double frac = double(t - 1) / double(T - 1);
    double b;
    if (cfg.kind == BetaKind::linear) {
      b = cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start);
    } else {
      const double r = r0 + frac * (r1 - r0);
      b = r * r;
    }
    s.betas_[t] = b;
    s.alphas_[t] = 1.0 - b;
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * s.alphas_[t];
  }
  return s;
}

enum class SkipStrategy { trailing, linspace };

inline SkipStrategy parse_skip_strategy(std::string_view s) {
  if (s == "trailing") return SkipStrategy::trailing;
  if (s == "linspace") return SkipStrategy::linspace;
  throw ConfigError("plan.strategy: unknown skipping rule '" + std::string(s) + "'");
}

inline std::string to_string(SkipStrategy s) { return s == SkipStrategy::trailing ? "trailing" : "linspace"; }

/// Descending inversion timesteps kappa_M > ... > kappa_1 within the cap N,
/// plus the subset of starting steps used for training.
struct TimestepPlan {
  std::vector<int> kappas;       // descending
  int cap = 250;                 // N
  SkipStrategy strategy = SkipStrategy::trailing;
  std::vector<int> train_starts;  // subset of kappas, descending

  int largest() const { return kappas.front(); }
  int smallest() const { return kappas.back(); }
  bool contains(int t) const { return std::find(kappas.begin(), kappas.end(), t) != kappas.end(); }
  std::size_t size() const { return kappas.size(); }
};

inline constexpr double kDefaultSnrFloor = 1.44;

/// Skipped-timestep plan of M steps under cap N.
///   trailing: kappa_i = round_half_up(N i / M)
///   linspace: kappa_i = 1 + round_half_even((N-1)(i-1)/(M-1))
/// The start step kappa_M must keep SNR >= snr_floor.
inline TimestepPlan select_timesteps(const NoiseSchedule& s, int N, int M, SkipStrategy strategy,
                                     double snr_floor = kDefaultSnrFloor) {
  if (M < 1 || N < M) throw ConfigError("plan: need 1 <= M <= N (got M=" + std::to_string(M) + ", N=" + std::to_string(N) + ")");
  if (N > s.total_steps()) throw ConfigError("plan.N exceeds schedule length T");
  std::vector<int> asc;
  asc.reserve(M);
  for (int i = 1; i <= M; ++i) {
    int k;
    if (strategy == SkipStrategy::trailing) {
      k = static_cast<int>((2LL * N * i + M) / (2LL * M));
    } else if (M == 1) {
      k = N;
    } else {
      const long long num = 1LL * (N - 1) * (i - 1), den = M - 1;
      long long q = num / den;
      const long long rem2 = 2 * (num % den);
      if (rem2 > den || (rem2 == den && (q % 2 == 1))) ++q;
      k = static_cast<int>(1 + q);
    }
    if (!asc.empty() && asc.back() == k) {
      throw ConfigError("plan: duplicate timestep " + std::to_string(k) + " after rounding (N=" + std::to_string(N) +
                        ", M=" + std::to_string(M) + ")");
    }
    asc.push_back(k);
  }
  TimestepPlan plan;
  plan.kappas.assign(asc.rbegin(), asc.rend());
  plan.cap = N;
  plan.strategy = strategy;
  if (s.snr(plan.largest()) < snr_floor) {
    throw ConfigError("plan: start step " + std::to_string(plan.largest()) + " has SNR " + std::to_string(s.snr(plan.largest())) +
                      " below floor " + std::to_string(snr_floor));
  }
  // Default training starts: every kappa but the smallest.
  plan.train_starts.assign(plan.kappas.begin(), plan.kappas.end() - (plan.kappas.size() > 1 ? 1 : 0));
  return plan;
}

/// Suffix of the plan beginning at `start`.
inline TimestepPlan sub_plan(const TimestepPlan& plan, int start) {
  if (!plan.contains(start)) throw DomainError("start timestep " + std::to_string(start) + " is not in the plan");
  TimestepPlan out = plan;
  out.kappas.clear();
  for (int k : plan.kappas)
    if (k <= start) out.kappas.push_back(k);
  out.train_starts.clear();
  for (int k : plan.train_starts)
    if (k <= start) out.train_starts.push_back(k);
  return out;
}

/// `steps` timesteps starting at `start`: the start itself followed by the
/// steps-1 smallest plan timesteps below it.
inline std::vector<int> select_steps(const TimestepPlan& plan, int start, int steps) {
  const TimestepPlan suffix = sub_plan(plan, start);
  if (steps < 1 || steps > static_cast<int>(suffix.size())) {
    throw DomainError("steps=" + std::to_string(steps) + " not reachable from start " + std::to_string(start) +
                      " (max " + std::to_string(suffix.size()) + ")");
  }
  std::vector<int> out{start};
  out.insert(out.end(), suffix.kappas.end() - (steps - 1), suffix.kappas.end());
  return out;
}

}  // namespace invsr
