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
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "invsr/error.hpp"
#include "invsr/nn/ops.hpp"
#include "invsr/nn/params.hpp"
#include "invsr/nn/tape.hpp"

namespace invsr::nn {

/// Sinusoidal embedding [sin(t w_0..), cos(t w_0..)], w_k = 10000^(-2k/dim).
inline std::vector<double> time_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2) throw ConfigError("time embedding dimension must be positive and even");
  if (t < 0) throw DomainError("time embedding needs t >= 0");
  const int half = dim / 2;
  std::vector<double> e(dim);
  for (int k = 0; k < half; ++k) {
    const double w = std::pow(10000.0, -2.0 * k / dim);
    e[k] = std::sin(t * w);
    e[half + k] = std::cos(t * w);
  }
  return e;
}

template <class T>
Tensor<T> time_embedding_batch(std::span<const int> ts, int dim) {
  Tensor<T> out(Shape{ts.size(), std::size_t(dim)});
  for (std::size_t n = 0; n < ts.size(); ++n) {
    const auto e = time_embedding(ts[n], dim);
    for (int k = 0; k < dim; ++k) out[n * dim + k] = static_cast<T>(e[k]);
  }
  return out;
}

struct DenoiserSpec {
  int image_channels = 3;
  int base_channels = 32;
  std::vector<int> channel_mults{1, 2};
  int res_blocks = 1;
  int time_dim = 128;
  int groups = 8;
};

struct PredictorSpec {
  int image_channels = 3;
  int base_channels = 32;
  int time_dim = 128;
  int groups = 8;
  double logvar_min = -10.0;
  double logvar_max = 10.0;
};

struct DiscriminatorSpec {
  int image_channels = 3;
  int base_channels = 32;
  double leaky_slope = 0.2;
};

namespace detail {

/// Declares parameters in the order layers are built.
class DeclBuilder {
 public:
  void conv(const std::string& name, int cin, int cout, int k, bool zero = false) {
    const std::size_t fan = std::size_t(cin) * k * k;
    decls_.push_back({name + ".w", Shape{std::size_t(cout), std::size_t(cin), std::size_t(k), std::size_t(k)},
                      zero ? Init::zeros : Init::kaiming_uniform, fan});
    decls_.push_back({name + ".b", Shape{std::size_t(cout)}, Init::zeros, fan});
  }
  void linear(const std::string& name, int in, int out, bool zero = false) {
    decls_.push_back({name + ".w", Shape{std::size_t(out), std::size_t(in)}, zero ? Init::zeros : Init::kaiming_uniform,
                      std::size_t(in)});
    decls_.push_back({name + ".b", Shape{std::size_t(out)}, Init::zeros, std::size_t(in)});
  }
  void norm(const std::string& name, int ch) {
    decls_.push_back({name + ".g", Shape{std::size_t(ch)}, Init::ones, 1});
    decls_.push_back({name + ".b", Shape{std::size_t(ch)}, Init::zeros, 1});
  }
  void res_block(const std::string& name, int cin, int cout, int time_dim) {
    norm(name + ".n1", cin);
    conv(name + ".c1", cin, cout, 3);
    linear(name + ".t", time_dim, cout);
    norm(name + ".n2", cout);
    conv(name + ".c2", cout, cout, 3);
    if (cin != cout) conv(name + ".skip", cin, cout, 1);
  }
  void attn_block(const std::string& name, int ch) {
    norm(name + ".n", ch);
    conv(name + ".q", ch, ch, 1);
    conv(name + ".k", ch, ch, 1);
    conv(name + ".v", ch, ch, 1);
    conv(name + ".o", ch, ch, 1);
  }
  void time_mlp(const std::string& name, int dim) {
    linear(name + ".l1", dim, dim);
    linear(name + ".l2", dim, dim);
  }
  std::vector<ParamDecl> take() { return std::move(decls_); }

 private:
  std::vector<ParamDecl> decls_;
};

}  // namespace detail

/// How a network's parameters enter a tape: trainable (gradients flow into
/// the store) or frozen (read-only; gradients still reach the inputs).
template <class T>
class Binding {
 public:
  static Binding trainable(ParamStore<T>& s) { return Binding(&s, s); }
  static Binding frozen(const ParamStore<T>& s) { return Binding(nullptr, s); }

  bool is_trainable() const { return mut_ != nullptr; }
  bool contains(const std::string& name) const { return store_.contains(name); }

  Var operator()(Tape<T>& tape, const std::string& name) const {
    if (!store_.contains(name)) throw ConfigError("parameter store is missing '" + name + "'");
    return mut_ ? tape.param(mut_->at(name)) : tape.frozen(store_.at(name));
  }

 private:
  Binding(ParamStore<T>* mut, const ParamStore<T>& store) : mut_(mut), store_(store) {}
  ParamStore<T>* mut_;
  const ParamStore<T>& store_;
};

namespace detail {

/// Applies layers by parameter name.
template <class T>
class Layers {
 public:
  Layers(Tape<T>& tape, const Binding<T>& bind, int groups) : tape_(tape), bind_(bind), groups_(groups) {}

  Var p(const std::string& name) { return bind_(tape_, name); }

  Var conv(const std::string& name, Var x, std::size_t stride = 1) {
    const Var w = p(name + ".w");
    const Var b = p(name + ".b");
    const std::size_t k = tape_.value(w).dim(2);
    return conv2d(tape_, x, w, &b, stride, k / 2);
  }
  Var lin(const std::string& name, Var x) { return linear(tape_, x, p(name + ".w"), p(name + ".b")); }
  Var norm(const std::string& name, Var x) {
    const std::size_t c = tape_.value(x).channels();
    const std::size_t g = std::min<std::size_t>(std::size_t(groups_), c);
    return group_norm(tape_, x, p(name + ".g"), p(name + ".b"), g);
  }

  Var res_block(const std::string& name, Var x, Var temb) {
    Var h = conv(name + ".c1", silu(tape_, norm(name + ".n1", x)));
    h = add_channel_bias(tape_, h, lin(name + ".t", silu(tape_, temb)));
    h = conv(name + ".c2", silu(tape_, norm(name + ".n2", h)));
    const Var skip = bind_.contains(name + ".skip.w") ? conv(name + ".skip", x) : x;
    return add(tape_, h, skip);
  }

  Var attn_block(const std::string& name, Var x) {
    const Var h = norm(name + ".n", x);
    const Var a = attention(tape_, conv(name + ".q", h), conv(name + ".k", h), conv(name + ".v", h));
    return add(tape_, x, conv(name + ".o", a));
  }

  Var time_mlp(const std::string& name, std::span<const int> ts, int dim) {
    const Var e = tape_.constant(time_embedding_batch<T>(ts, dim));
    return lin(name + ".l2", silu(tape_, lin(name + ".l1", e)));
  }

 private:
  Tape<T>& tape_;
  const Binding<T>& bind_;
  int groups_;
};

inline void check_image(const Shape& s, int channels, std::size_t multiple, const char* who) {
  require_rank4(s, who);
  if (s[1] != std::size_t(channels)) {
    throw DimensionError(std::string(who) + ": expected " + std::to_string(channels) + " channels, got " + s.str());
  }
  if (s[2] % multiple || s[3] % multiple || s[2] == 0 || s[3] == 0) {
    throw DimensionError(std::string(who) + ": spatial size must be a positive multiple of " + std::to_string(multiple) +
                         ", got " + s.str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Denoiser: small UNet predicting the noise in x_t.

inline std::vector<ParamDecl> denoiser_decls(const DenoiserSpec& s) {
  if (s.channel_mults.empty() || s.res_blocks < 1 || s.base_channels % s.groups) {
    throw ConfigError("denoiser: need non-empty channel_mults, res_blocks >= 1, base_channels divisible by groups");
  }
  detail::DeclBuilder d;
  d.time_mlp("time", s.time_dim);
  d.conv("in", s.image_channels, s.base_channels, 3);
  const int L = int(s.channel_mults.size());
  int ch = s.base_channels;
  std::vector<int> skip_ch;
  for (int l = 0; l < L; ++l) {
    const int out = s.base_channels * s.channel_mults[l];
    for (int r = 0; r < s.res_blocks; ++r) {
      d.res_block("down" + std::to_string(l) + "." + std::to_string(r), ch, out, s.time_dim);
      ch = out;
      skip_ch.push_back(ch);
    }
    if (l + 1 < L) d.conv("down" + std::to_string(l) + ".ds", ch, ch, 3);
  }
  for (int l = L - 1; l >= 0; --l) {
    const int out = s.base_channels * s.channel_mults[l];
    for (int r = 0; r < s.res_blocks; ++r) {
      d.res_block("up" + std::to_string(l) + "." + std::to_string(r), ch + skip_ch.back(), out, s.time_dim);
      skip_ch.pop_back();
      ch = out;
    }
    if (l > 0) {
      const int next = s.base_channels * s.channel_mults[l - 1];
      d.conv("up" + std::to_string(l) + ".us", ch, next, 3);
      ch = next;
    }
  }
  d.norm("out.n", ch);
  d.conv("out", ch, s.image_channels, 3, /*zero=*/true);
  return d.take();
}

/// Records the denoiser on `tape`. `ts` holds one timestep per batch item.
template <class T>
Var denoiser_forward(Tape<T>& tape, const Binding<T>& params, const DenoiserSpec& s, Var x, std::span<const int> ts) {
  const std::size_t mult = std::size_t(1) << (s.channel_mults.size() - 1);
  detail::check_image(tape.value(x).shape(), s.image_channels, mult, "denoiser");
  if (ts.size() != tape.value(x).batch()) throw DimensionError("denoiser: need one timestep per batch item");
  detail::Layers<T> L(tape, params, s.groups);
  const Var temb = L.time_mlp("time", ts, s.time_dim);
  Var h = L.conv("in", x);
  std::vector<Var> skips;
  const int levels = int(s.channel_mults.size());
  for (int l = 0; l < levels; ++l) {
    for (int r = 0; r < s.res_blocks; ++r) {
      h = L.res_block("down" + std::to_string(l) + "." + std::to_string(r), h, temb);
      skips.push_back(h);
    }
    if (l + 1 < levels) h = L.conv("down" + std::to_string(l) + ".ds", h, 2);
  }
  for (int l = levels - 1; l >= 0; --l) {
    for (int r = 0; r < s.res_blocks; ++r) {
      h = L.res_block("up" + std::to_string(l) + "." + std::to_string(r), concat_channels(tape, h, skips.back()), temb);
      skips.pop_back();
    }
    if (l > 0) h = L.conv("up" + std::to_string(l) + ".us", upsample_nearest2x(tape, h));
  }
  return L.conv("out", silu(tape, L.norm("out.n", h)));
}

/// Inference convenience: eps_hat for x_t with a shared timestep.
template <class T>
Tensor<T> denoiser_forward(const ParamStore<T>& params, const DenoiserSpec& s, const Tensor<T>& x_t, int t) {
  Tape<T> tape;
  const std::vector<int> ts(x_t.batch(), t);
  const Var out = denoiser_forward(tape, Binding<T>::frozen(params), s, tape.constant(x_t), ts);
  return tape.value(out);
}

// ---------------------------------------------------------------------------
// Noise predictor: encoder-decoder with attention in both down blocks,
// output split into (mean, logvar).

inline std::vector<ParamDecl> predictor_decls(const PredictorSpec& s) {
  if (s.base_channels % s.groups) throw ConfigError("predictor: base_channels must be divisible by groups");
  detail::DeclBuilder d;
  const int b = s.base_channels;
  d.time_mlp("time", s.time_dim);
  d.conv("in", s.image_channels, b, 3);
  d.conv("d1.ds", b, b, 3);
  d.res_block("d1.res", b, b, s.time_dim);
  d.attn_block("d1.attn", b);
  d.conv("d2.ds", b, 2 * b, 3);
  d.res_block("d2.res", 2 * b, 2 * b, s.time_dim);
  d.attn_block("d2.attn", 2 * b);
  d.conv("u2.us", 2 * b, b, 3);
  d.res_block("u2.res", 2 * b, b, s.time_dim);
  d.conv("u1.us", b, b, 3);
  d.res_block("u1.res", 2 * b, b, s.time_dim);
  d.norm("out.n", b);
  d.conv("out", b, 2 * s.image_channels, 3, /*zero=*/true);
  return d.take();
}

struct PredictorVars {
  Var mean;
  Var logvar;
};

template <class T>
PredictorVars predictor_forward(Tape<T>& tape, const Binding<T>& params, const PredictorSpec& s, Var y,
                                std::span<const int> ts) {
  detail::check_image(tape.value(y).shape(), s.image_channels, 4, "predictor");
  if (ts.size() != tape.value(y).batch()) throw DimensionError("predictor: need one timestep per batch item");
  detail::Layers<T> L(tape, params, s.groups);
  const Var temb = L.time_mlp("time", ts, s.time_dim);
  const Var h0 = L.conv("in", y);
  Var d1 = L.conv("d1.ds", h0, 2);
  d1 = L.attn_block("d1.attn", L.res_block("d1.res", d1, temb));
  Var d2 = L.conv("d2.ds", d1, 2);
  d2 = L.attn_block("d2.attn", L.res_block("d2.res", d2, temb));
  Var u = L.conv("u2.us", upsample_nearest2x(tape, d2));
  u = L.res_block("u2.res", concat_channels(tape, u, d1), temb);
  u = L.conv("u1.us", upsample_nearest2x(tape, u));
  u = L.res_block("u1.res", concat_channels(tape, u, h0), temb);
  const Var out = L.conv("out", silu(tape, L.norm("out.n", u)));
  const std::size_t C = std::size_t(s.image_channels);
  const Var mean = slice_channels(tape, out, 0, C);
  const Var logvar = clamp(tape, slice_channels(tape, out, C, C), T(s.logvar_min), T(s.logvar_max));
  return {mean, logvar};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> predictor_forward(const ParamStore<T>& params, const PredictorSpec& s, const Tensor<T>& y0,
                                                  int t) {
  Tape<T> tape;
  const std::vector<int> ts(y0.batch(), t);
  const auto out = predictor_forward(tape, Binding<T>::frozen(params), s, tape.constant(y0), ts);
  return {tape.value(out.mean), tape.value(out.logvar)};
}

/// mean + exp(logvar / 2) * xi.
template <class T>
Tensor<T> reparameterize(const Tensor<T>& mean, const Tensor<T>& logvar, const Tensor<T>& xi) {
  require_same_shape(mean.shape(), logvar.shape(), "reparameterize");
  require_same_shape(mean.shape(), xi.shape(), "reparameterize");
  Tensor<T> out(mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean[i] + std::exp(logvar[i] * T(0.5)) * xi[i];
  return out;
}

template <class T>
Var reparameterize(Tape<T>& tape, Var mean, Var logvar, Var xi) {
  const Var stdev = exp(tape, affine(tape, logvar, T(0.5), T(0)));
  return add(tape, mean, mul(tape, stdev, xi));
}

// ---------------------------------------------------------------------------
// Discriminator: three stride-2 conv blocks, global pooling, scalar head.

inline std::vector<ParamDecl> discriminator_decls(const DiscriminatorSpec& s) {
  detail::DeclBuilder d;
  const int b = s.base_channels;
  d.conv("c1", s.image_channels, b, 3);
  d.conv("c2", b, 2 * b, 3);
  d.conv("c3", 2 * b, 4 * b, 3);
  d.linear("head", 4 * b, 1, /*zero=*/true);
  return d.take();
}

/// One logit per batch item, shape [N, 1].
template <class T>
Var discriminator_forward(Tape<T>& tape, const Binding<T>& params, const DiscriminatorSpec& s, Var x) {
  detail::check_image(tape.value(x).shape(), s.image_channels, 1, "discriminator");
  detail::Layers<T> L(tape, params, 1);
  const T slope = T(s.leaky_slope);
  Var h = leaky_relu(tape, L.conv("c1", x, 2), slope);
  h = leaky_relu(tape, L.conv("c2", h, 2), slope);
  h = leaky_relu(tape, L.conv("c3", h, 2), slope);
  return L.lin("head", mean_spatial(tape, h));
}

template <class T>
std::vector<T> discriminator_forward(const ParamStore<T>& params, const DiscriminatorSpec& s, const Tensor<T>& x) {
  Tape<T> tape;
  const Var out = discriminator_forward(tape, Binding<T>::frozen(params), s, tape.constant(x));
  const auto& v = tape.value(out).values();
  return {v.begin(), v.end()};
}

// ---------------------------------------------------------------------------

template <class T = float>
ParamStore<T> init_params(const DenoiserSpec& s, std::uint64_t seed) {
  return materialize<T>(denoiser_decls(s), seed);
}
template <class T = float>
ParamStore<T> init_params(const PredictorSpec& s, std::uint64_t seed) {
  return materialize<T>(predictor_decls(s), seed);
}
template <class T = float>
ParamStore<T> init_params(const DiscriminatorSpec& s, std::uint64_t seed) {
  return materialize<T>(discriminator_decls(s), seed);
}

}  // namespace invsr::nn
