// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace foresight::nn {

// Dense row-major tensor of doubles, rank 1..3. Tape ops work on rank-2 views;
// a vector is represented as a 1 x n matrix.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor row_vector(std::span<const double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors. Rank-1 tensors behave as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Throws NumericError naming `where` if any entry is NaN or infinite.
void require_finite(const Tensor& t, std::string_view where);

// Raw kernels; all accumulate into `c` (c += ...).
// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c);
// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c);
// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c);

}  // namespace foresight::nn
