// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "foresight/error.hpp"

namespace foresight::nn {

namespace {

std::size_t volume(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw InvalidArgument("tensor rank must be 1..3, got " + std::to_string(shape.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw InvalidArgument("tensor dimensions must be positive: " + shape_string(shape));
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  data_.assign(volume(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != volume(shape_)) {
    throw InvalidArgument("data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row_vector(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
  switch (shape_.size()) {
    case 1: return 1;
    case 2: return shape_[0];
    default: throw InvalidArgument("rows() on tensor of shape " + shape_string(shape_));
  }
}

std::size_t Tensor::cols() const {
  switch (shape_.size()) {
    case 1: return shape_[0];
    case 2: return shape_[1];
    default: throw InvalidArgument("cols() on tensor of shape " + shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_finite(const Tensor& t, std::string_view where) {
  if (!t.all_finite()) throw NumericError("non-finite value produced by " + std::string(where));
}

void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      pc[i * n + j] += s;
    }
  }
}

void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = pb + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      double* crow = pc + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace foresight::nn
