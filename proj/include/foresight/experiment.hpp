// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foresight/baselines.hpp"
#include "foresight/predictor.hpp"
#include "foresight/ranker.hpp"
#include "foresight/seqstore.hpp"
#include "foresight/synth.hpp"

namespace foresight::eval {

// Chronological split of every author's stream by segment index.
struct SplitFractions {
  double train = 0.8;
  double valid = 0.0;
  double test = 0.2;
  void validate() const;
};

struct SplitPoints {
  std::uint64_t train_end = 0;  // segments [0, train_end) are training data
  std::uint64_t test_begin = 0; // segments [test_begin, length) are held out
};
SplitPoints split_points(std::uint64_t stream_length, const SplitFractions& fractions);

// K-Means over the training part of every stream.
quant::Codebook fit_codebook(std::span<const std::vector<synth::SegmentEvent>> streams,
                             const SplitFractions& fractions, const quant::KMeansConfig& config);
std::vector<quant::QuantizedSegment> quantize_corpus(std::span<const std::vector<synth::SegmentEvent>> streams,
                                                     const quant::Codebook& codebook);

// Per-author raw Sid streams (index = seq_index) and their compressed form.
struct SidCorpus {
  std::map<std::int64_t, std::vector<Sid>> raw;
  std::map<std::int64_t, seqstore::CompressedSidSequence> compressed;
};
SidCorpus build_sid_corpus(std::span<const quant::QuantizedSegment> segments);

// Window over the author's stream as of segment t (inclusive): complete runs
// before t's run plus the partial run ending at t.
HistoryWindow window_at(std::span<const Sid> raw, std::uint64_t t, std::size_t l_max, Sid pad_code);

// Next-run examples whose target run starts inside each author's training part.
std::vector<predictor::TrainExample> training_examples(const SidCorpus& sids, std::size_t l_max, Sid pad_code,
                                                       const SplitFractions& fractions);

// A next-run prediction case with the ground-truth topic of the window's last segment.
struct EvalWindow {
  HistoryWindow window;
  Sid target = 0;
  std::int32_t current_topic = -1;
};

// Runs k >= 1 whose first segment lies in [begin, end). topics may be empty
// (no ground truth), in which case current_topic stays -1.
std::vector<EvalWindow> eval_windows(const seqstore::CompressedSidSequence& seq, std::span<const std::int32_t> topics,
                                     std::size_t l_max, Sid pad_code, std::uint64_t begin, std::uint64_t end);

struct StrategyAccuracy {
  std::string name;
  std::optional<double> accuracy;  // nullopt when not computable (e.g. no ground truth)
};

struct OracleInputs {
  const synth::TopicModel* topic_model = nullptr;
  std::vector<Sid> topic_to_sid;
};

// Table of next-run accuracies: Model, Last, MaxFreq, MaxWeight and, when
// oracle inputs are given, Bayes.
std::vector<StrategyAccuracy> evaluate_strategies(const predictor::PredictorModel& model,
                                                  std::span<const EvalWindow> windows, std::size_t l_raw,
                                                  const OracleInputs* oracle);

// Predictor features for each interaction, from the author's window as of at_seq_index.
std::vector<predictor::ForesightOutput> interaction_features(const predictor::PredictorModel& model,
                                                             const SidCorpus& sids,
                                                             std::span<const synth::InteractionRecord> interactions);

struct Arm {
  std::string name;
  ranker::FeatureFlags flags;
};
// base, +history (sg(I)), +history+foresight (sg(I), sg(D)).
std::span<const Arm> standard_arms();
const Arm& arm_by_name(const std::string& name);

struct TaskMetrics {
  std::optional<double> auc;
  std::optional<double> gauc;
};

struct ArmResult {
  std::string name;
  bool ok = false;
  std::string error;  // set when training failed
  std::array<TaskMetrics, synth::kNumTasks> tasks{};
  double final_loss = 0.0;
};

// Interactions whose label horizon lies in the training part, and those at or after test_begin.
struct InteractionSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
InteractionSplit split_interactions(std::span<const synth::InteractionRecord> interactions,
                                    const std::map<std::int64_t, std::uint64_t>& stream_lengths,
                                    const SplitFractions& fractions);

std::vector<ranker::RankSample> build_samples(std::span<const synth::InteractionRecord> interactions,
                                              std::span<const predictor::ForesightOutput> features,
                                              std::span<const std::size_t> index, const ranker::FeatureFlags& flags);

// Held-out AUC / GAUC per task of a trained ranker.
ArmResult evaluate_arm(const ranker::RankerModel& trained, const std::string& name,
                       std::span<const ranker::RankSample> test);
// Trains one ranker for the arm; training divergence is reported in the result.
ArmResult run_arm(const Arm& arm, const ranker::RankerConfig& base_config, const ranker::TrainOptions& options,
                  std::span<const synth::InteractionRecord> interactions,
                  std::span<const predictor::ForesightOutput> features, const InteractionSplit& split,
                  ranker::RankerModel* trained_out = nullptr);

// Every arm trained with identical data order and seeds.
std::vector<ArmResult> run_ablation(const ranker::RankerConfig& base_config, const ranker::TrainOptions& options,
                                    std::span<const synth::InteractionRecord> interactions,
                                    std::span<const predictor::ForesightOutput> features,
                                    const InteractionSplit& split);

struct EvalReport {
  std::vector<ArmResult> arms;
  std::vector<StrategyAccuracy> strategies;
  std::size_t eval_windows = 0;
  std::size_t train_interactions = 0;
  std::size_t test_interactions = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline constexpr std::string_view kReportSchema = "foresight-eval-report/1";

// Aligned text tables: ranking AUC/GAUC per arm with deltas vs base, then strategy accuracies.
std::string format_text(const EvalReport& report);
// Tab-separated rows "section key field value" under a schema header.
std::string format_tsv(const EvalReport& report);

}  // namespace foresight::eval
