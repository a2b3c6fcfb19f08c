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
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "invsr/error.hpp"

namespace invsr {

/// Storage aligned for the widest SIMD packet so vectorized kernels peel the
/// same way for every allocation (bit-reproducible results).
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dimensions of a tensor, outermost first. Images are rank 4 [N, C, H, W].
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const { return dims_; }

  std::size_t numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Dense row-major array. T is float (network default) or double (checks).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

  /// Builds from external data; rejects count mismatch and non-finite values.
  static Tensor from_data(Shape shape, std::vector<T> values) {
    if (values.size() != shape.numel()) {
      throw DimensionError("tensor data has " + std::to_string(values.size()) + " values, shape " + shape.str() +
                           " needs " + std::to_string(shape.numel()));
    }
    for (T v : values) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor data");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(values.begin(), values.end());
    return t;
  }

  static Tensor nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{0}) {
    return Tensor(Shape{n, c, h, w}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-4 accessors.
  std::size_t batch() const { return shape_[0]; }
  std::size_t channels() const { return shape_[1]; }
  std::size_t height() const { return shape_[2]; }
  std::size_t width() const { return shape_[3]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const AlignedVector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape s) const {
    if (s.numel() != size()) throw DimensionError("reshape " + shape_.str() + " -> " + s.str());
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    Tensor<U> t(shape_);
    std::copy(out.begin(), out.end(), t.data());
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw DimensionError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

inline void require_rank4(const Shape& s, const char* what) {
  if (s.rank() != 4) throw DimensionError(std::string(what) + ": expected rank-4 [N,C,H,W], got " + s.str());
}

/// out = a*x + b*y elementwise.
template <class T>
Tensor<T> axpby(double a, const Tensor<T>& x, double b, const Tensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "axpby");
  Tensor<T> out(x.shape());
  const T ta = static_cast<T>(a), tb = static_cast<T>(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta * x[i] + tb * y[i];
  return out;
}

template <class T>
Tensor<T> scaled(const Tensor<T>& x, double a) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a) * x[i];
  return out;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
double l2_norm(const Tensor<T>& a) {
  double s = 0;
  for (T v : a.values()) s += double(v) * double(v);
  return std::sqrt(s);
}

/// Maps [0,1] pixels to the [-1,1] network domain and back.
template <class T>
Tensor<T> to_signed(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * T(2) - T(1);
  return out;
}

template <class T>
Tensor<T> to_unit(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] + T(1)) * T(0.5);
  return out;
}

template <class T>
Tensor<T> clipped(Tensor<T> x, T lo, T hi) {
  for (auto& v : x.span()) v = std::clamp(v, lo, hi);
  return x;
}

/// Stacks equally-shaped [1,C,H,W] tensors into one batch.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) return {};
  const Shape& s = items.front().shape();
  require_rank4(s, "stack_batch");
  Tensor<T> out(Shape{items.size() * s[0], s[1], s[2], s[3]});
  std::size_t off = 0;
  for (const auto& it : items) {
    require_same_shape(it.shape(), s, "stack_batch");
    std::copy(it.data(), it.data() + it.size(), out.data() + off);
    off += it.size();
  }
  return out;
}

/// Extracts image n of a batch as a [1,C,H,W] tensor.
template <class T>
Tensor<T> batch_item(const Tensor<T>& x, std::size_t n) {
  require_rank4(x.shape(), "batch_item");
  const std::size_t per = x.size() / x.batch();
  Tensor<T> out(Shape{1, x.channels(), x.height(), x.width()});
  std::copy(x.data() + n * per, x.data() + (n + 1) * per, out.data());
  return out;
}

}  // namespace invsr
