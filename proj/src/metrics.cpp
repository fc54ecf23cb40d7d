// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "foresight/error.hpp"

namespace foresight::eval {

std::optional<double> auc(std::span<const ScoredExample> examples) {
  std::size_t pos = 0;
  for (const auto& e : examples) {
    if (!std::isfinite(e.score)) throw InvalidArgument("auc: non-finite score");
    pos += e.label ? 1 : 0;
  }
  const std::size_t neg = examples.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return examples[a].score < examples[b].score; });

  // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled to stay integral.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && examples[order[j]].score == examples[order[i]].score) ++j;
    const std::uint64_t twice_avg = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (examples[order[k]].label) rank_sum2 += twice_avg;
    }
    i = j;
  }
  const std::uint64_t p = pos, n = neg;
  const std::uint64_t u2 = rank_sum2 - p * (p + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

std::optional<double> gauc(std::span<const ScoredExample> examples) {
  std::map<std::int64_t, std::vector<ScoredExample>> by_user;
  for (const auto& e : examples) by_user[e.user_id].push_back(e);
  double num = 0.0, den = 0.0;
  for (const auto& [_, group] : by_user) {
    const auto a = auc(group);
    if (!a) continue;
    num += static_cast<double>(group.size()) * *a;
    den += static_cast<double>(group.size());
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

double accuracy(std::span<const quant::Sid> predictions, std::span<const quant::Sid> targets) {
  if (predictions.size() != targets.size()) throw InvalidArgument("accuracy: length mismatch");
  if (predictions.empty()) throw InvalidArgument("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hit += predictions[i] == targets[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

}  // namespace foresight::eval
