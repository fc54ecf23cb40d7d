// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "foresight/error.hpp"

namespace foresight::eval {
namespace {

void require_nonempty(const HistoryWindow& w, const char* who) {
  if (w.valid_len == 0) throw InvalidArgument(std::string(who) + ": empty window");
}

// Row of the next-topic distribution under the given target.
std::vector<double> next_distribution(const synth::TopicModel& model, std::size_t c, OracleTarget target) {
  const auto row = model.transition_row(c);
  std::vector<double> p(row.begin(), row.end());
  if (target == OracleTarget::NextRun) {
    const double leave = 1.0 - p[c];
    if (leave <= 0.0) throw InvalidArgument("bayes oracle: absorbing topic has no next run");
    p[c] = 0.0;
    for (auto& x : p) x /= leave;
  }
  return p;
}

}  // namespace

Sid baseline_last(const HistoryWindow& window) {
  require_nonempty(window, "baseline_last");
  return window.sids.back();
}

Sid baseline_max_freq(const HistoryWindow& window, std::size_t l_raw) {
  require_nonempty(window, "baseline_max_freq");
  if (l_raw == 0) throw InvalidArgument("baseline_max_freq: l_raw must be positive");
  const auto raw = seqstore::window_raw(window);
  const std::size_t begin = raw.size() > l_raw ? raw.size() - l_raw : 0;
  std::map<Sid, std::size_t> count;
  std::size_t best = 0;
  for (std::size_t i = begin; i < raw.size(); ++i) best = std::max(best, ++count[raw[i]]);
  for (std::size_t i = raw.size(); i-- > begin;) {
    if (count[raw[i]] == best) return raw[i];
  }
  throw Error("baseline_max_freq: unreachable");
}

Sid baseline_max_weight(const HistoryWindow& window) {
  require_nonempty(window, "baseline_max_weight");
  std::map<Sid, std::uint64_t> weight;
  std::uint64_t best = 0;
  for (std::size_t i = window.first_valid(); i < window.size(); ++i) {
    best = std::max(best, weight[window.sids[i]] += window.freqs[i]);
  }
  for (std::size_t i = window.size(); i-- > window.first_valid();) {
    if (weight[window.sids[i]] == best) return window.sids[i];
  }
  throw Error("baseline_max_weight: unreachable");
}

std::vector<Sid> majority_sid_per_topic(std::span<const std::int32_t> topics, std::span<const Sid> sids,
                                        std::size_t num_topics, std::size_t num_codes) {
  if (topics.size() != sids.size()) throw InvalidArgument("majority_sid_per_topic: length mismatch");
  std::vector<std::uint64_t> counts(num_topics * num_codes, 0);
  for (std::size_t i = 0; i < topics.size(); ++i) {
    if (topics[i] < 0 || static_cast<std::size_t>(topics[i]) >= num_topics)
      throw InvalidArgument("majority_sid_per_topic: topic out of range");
    if (sids[i] >= num_codes) throw InvalidArgument("majority_sid_per_topic: sid out of range");
    ++counts[static_cast<std::size_t>(topics[i]) * num_codes + sids[i]];
  }
  std::vector<Sid> out(num_topics, 0);
  for (std::size_t t = 0; t < num_topics; ++t) {
    const auto* row = counts.data() + t * num_codes;
    out[t] = static_cast<Sid>(std::max_element(row, row + num_codes) - row);
  }
  return out;
}

std::size_t bayes_next_topic(const synth::TopicModel& model, std::int32_t current_topic, OracleTarget target) {
  if (current_topic < 0) throw InvalidArgument("bayes oracle: ground-truth topic unavailable");
  const auto c = static_cast<std::size_t>(current_topic);
  if (c >= model.num_topics) throw InvalidArgument("bayes oracle: topic out of range");
  const auto p = next_distribution(model, c, target);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

Sid bayes_oracle(const synth::TopicModel& model, std::int32_t current_topic, std::span<const Sid> topic_to_sid,
                 OracleTarget target) {
  if (topic_to_sid.size() != model.num_topics) throw InvalidArgument("bayes oracle: topic map size mismatch");
  return topic_to_sid[bayes_next_topic(model, current_topic, target)];
}

std::vector<double> stationary_distribution(const synth::TopicModel& model, OracleTarget target) {
  const std::size_t k = model.num_topics;
  std::vector<std::vector<double>> rows(k);
  for (std::size_t c = 0; c < k; ++c) rows[c] = next_distribution(model, c, target);
  // Lazy chain (I + P) / 2 has the same stationary law and cannot oscillate.
  std::vector<double> pi(k, 1.0 / static_cast<double>(k)), next(k);
  for (int iter = 0; iter < 100000; ++iter) {
    for (std::size_t j = 0; j < k; ++j) next[j] = 0.5 * pi[j];
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < k; ++j) next[j] += 0.5 * pi[c] * rows[c][j];
    double diff = 0.0;
    for (std::size_t j = 0; j < k; ++j) diff += std::abs(next[j] - pi[j]);
    pi.swap(next);
    if (diff < 1e-15) break;
  }
  return pi;
}

double bayes_accuracy(const synth::TopicModel& model, OracleTarget target) {
  const auto pi = stationary_distribution(model, target);
  double acc = 0.0;
  for (std::size_t c = 0; c < model.num_topics; ++c) {
    const auto p = next_distribution(model, c, target);
    acc += pi[c] * *std::max_element(p.begin(), p.end());
  }
  return acc;
}

}  // namespace foresight::eval
