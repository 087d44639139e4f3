// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

namespace cflm {

// Dense row-major tensor. Rank 1 and 2 cover everything the model needs.
template <typename T>
struct Tensor {
  std::vector<size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s)
      : shape(std::move(s)),
        data(std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>()), T(0)) {}

  static Tensor matrix(size_t rows, size_t cols) { return Tensor({rows, cols}); }
  static Tensor vector(size_t n) { return Tensor({n}); }

  size_t rank() const { return shape.size(); }
  size_t size() const { return data.size(); }
  size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T* row(size_t i) { return data.data() + i * cols(); }
  const T* row(size_t i) const { return data.data() + i * cols(); }
  T& at(size_t i, size_t j) { return data[i * cols() + j]; }
  const T& at(size_t i, size_t j) const { return data[i * cols() + j]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

template <typename T>
using Matrix = Tensor<T>;

}  // namespace cflm
