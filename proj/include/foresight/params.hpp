// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "foresight/tensor.hpp"

namespace foresight::nn {

struct Param {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
};

// Named parameters with gradient accumulators and Adam moments. Iteration order
// is lexicographic by name, which fixes the checkpoint layout and update order.
class ParamStore {
 public:
  Param& add(const std::string& name, Tensor init);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  std::uint64_t step() const { return step_; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Named-tensor container: "FSNT", version, count, then per tensor
  // (name, rank, dims as u32, values as f64 LE), then a 32-byte SHA-256 footer
  // over all preceding bytes. Only values are stored.
  std::vector<std::uint8_t> serialize() const;
  static ParamStore deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static ParamStore load(const std::filesystem::path& path);

  // SHA-256 of the serialized values (the checkpoint footer, hex encoded).
  std::string content_hash() const;

 private:
  friend void adam_step(ParamStore&, const struct AdamConfig&);
  std::map<std::string, Param> params_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over every parameter, then zeroes gradients.
void adam_step(ParamStore& store, const AdamConfig& cfg);

}  // namespace foresight::nn
