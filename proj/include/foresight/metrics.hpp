// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "foresight/quantizer.hpp"

namespace foresight::eval {

struct ScoredExample {
  std::int64_t user_id = 0;
  double score = 0.0;
  std::uint8_t label = 0;
};

// Mann-Whitney AUC via rank sums; tied scores share their average rank, i.e.
// count half. nullopt when only one class is present.
std::optional<double> auc(std::span<const ScoredExample> examples);

// Per-user AUC averaged with weights = per-user example counts. Users whose
// labels are all one class are dropped from both numerator and weights.
// nullopt when no user has both classes.
std::optional<double> gauc(std::span<const ScoredExample> examples);

// Fraction of exact matches. Throws InvalidArgument on empty or mismatched input.
double accuracy(std::span<const quant::Sid> predictions, std::span<const quant::Sid> targets);

}  // namespace foresight::eval
