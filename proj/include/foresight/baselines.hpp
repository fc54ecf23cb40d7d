// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "foresight/seqstore.hpp"
#include "foresight/synth.hpp"

namespace foresight::eval {

using quant::Sid;
using seqstore::HistoryWindow;

// Sid of the final run.
Sid baseline_last(const HistoryWindow& window);

// Mode of the last l_raw raw segments of the window (all of them when l_raw
// exceeds the expanded length). Ties go to the Sid occurring most recently.
Sid baseline_max_freq(const HistoryWindow& window, std::size_t l_raw);

// Sid with the largest summed run weight in the window. Ties go to the Sid
// whose latest run is most recent.
Sid baseline_max_weight(const HistoryWindow& window);

// What the oracle predicts: the topic of the next raw segment, or of the next
// run (the first segment whose topic differs from the current one).
enum class OracleTarget : std::uint8_t { NextSegment, NextRun };

// Most frequent Sid per topic over aligned (topic, sid) pairs; lowest Sid on
// ties. Topics never observed map to Sid 0.
std::vector<Sid> majority_sid_per_topic(std::span<const std::int32_t> topics, std::span<const Sid> sids,
                                        std::size_t num_topics, std::size_t num_codes);

// argmax over the next-topic distribution given the current topic; lowest
// topic on ties. Throws InvalidArgument for a negative (unknown) topic.
std::size_t bayes_next_topic(const synth::TopicModel& model, std::int32_t current_topic, OracleTarget target);

Sid bayes_oracle(const synth::TopicModel& model, std::int32_t current_topic, std::span<const Sid> topic_to_sid,
                 OracleTarget target);

// Stationary distribution of the topic chain (NextSegment) or of its jump
// chain (NextRun), by power iteration.
std::vector<double> stationary_distribution(const synth::TopicModel& model, OracleTarget target);

// Long-run oracle accuracy: sum_c pi(c) * max_j P(next = j | c).
double bayes_accuracy(const synth::TopicModel& model, OracleTarget target);

}  // namespace foresight::eval
