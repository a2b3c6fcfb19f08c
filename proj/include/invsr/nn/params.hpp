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
#include <map>
#include <random>
#include <string>
#include <vector>

#include "invsr/error.hpp"
#include "invsr/tensor.hpp"

namespace invsr::nn {

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named parameters with paired gradients, kept in declaration order.
template <class T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    Tensor<T> grad(value.shape());
    params_.push_back({name, std::move(value), std::move(grad)});
    return params_.back();
  }

  Param<T>& at(const std::string& name) { return params_[index_of(name)]; }
  const Param<T>& at(const std::string& name) const { return params_[index_of(name)]; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  std::size_t size() const { return params_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
    }
    return true;
  }

 private:
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

enum class Init { kaiming_uniform, zeros, ones };

/// Declared parameter: shape, initializer and fan-in for Kaiming scaling.
struct ParamDecl {
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in = 1;
};

/// Materializes declarations with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights,
/// drawing from one stream in declaration order.
template <class T>
ParamStore<T> materialize(const std::vector<ParamDecl>& decls, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore<T> store;
  for (const auto& d : decls) {
    Tensor<T> v(d.shape);
    switch (d.init) {
      case Init::zeros:
        break;
      case Init::ones:
        v.fill(T{1});
        break;
      case Init::kaiming_uniform: {
        const double bound = 1.0 / std::sqrt(double(d.fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& x : v.span()) x = static_cast<T>(u(rng));
        break;
      }
    }
    store.add(d.name, std::move(v));
  }
  return store;
}

}  // namespace invsr::nn
