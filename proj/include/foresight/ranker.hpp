// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "foresight/params.hpp"
#include "foresight/predictor.hpp"
#include "foresight/synth.hpp"
#include "foresight/tape.hpp"

namespace foresight::ranker {

using synth::kNumTasks;
using synth::Task;

// Which predictor features enter the ranking input. Disabled features are fed as zeros.
struct FeatureFlags {
  bool use_history = false;
  bool use_foresight = false;
  friend bool operator==(const FeatureFlags&, const FeatureFlags&) = default;
};

struct RankerConfig {
  std::size_t num_users = 0;    // ids >= num_users share one out-of-vocabulary row
  std::size_t num_authors = 0;
  std::size_t id_dim = 8;
  std::size_t feature_dim = 32; // width of the history / foresight features
  std::size_t num_experts = 4;
  std::size_t expert_hidden = 32;
  std::size_t expert_out = 16;
  std::size_t tower_hidden = 8;
  FeatureFlags flags;
  bool zero_init_towers = false;
  double prob_eps = 1e-7;       // probability clamp for outputs and BCE
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return 2 * id_dim + 2 * feature_dim; }
  void validate() const;
  friend bool operator==(const RankerConfig&, const RankerConfig&) = default;
};

struct RankSample {
  std::int64_t user_id = 0;
  std::int64_t author_id = 0;
  std::vector<double> history;    // detached copy of the pooled encoder output, or zeros
  std::vector<double> foresight;  // detached copy of the decoder output, or zeros
  std::array<double, kNumTasks> labels{};
};

// Copies predictor outputs by value; the sample keeps no link to the predictor.
RankSample build_sample(const synth::InteractionRecord& interaction, const predictor::ForesightOutput& features,
                        const FeatureFlags& flags);

struct RankerOutput {
  std::array<double, kNumTasks> probs{};
  std::array<std::vector<double>, kNumTasks> gates;  // per task, over experts
};

// Multi-gate mixture of experts:
//   x = [user_emb, author_emb, history, foresight]
//   expert_k(x) = relu(relu(x W1 + b1) W2 + b2)
//   gate_t(x) = softmax(x Wg_t + bg_t)
//   y_t = sigmoid(tower_t(sum_k gate_t[k] expert_k(x)))
class RankerModel {
 public:
  explicit RankerModel(const RankerConfig& config);
  RankerModel(const RankerConfig& config, nn::ParamStore params);

  const RankerConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  struct Graph {
    nn::Var logits;                           // batch x tasks
    std::array<nn::Var, kNumTasks> gates{};   // batch x experts
  };
  Graph build(nn::Tape& tape, std::span<const RankSample> batch) const;

  std::size_t user_row(std::int64_t id) const;
  std::size_t author_row(std::int64_t id) const;

 private:
  RankerConfig config_;
  nn::ParamStore params_;
};

RankerOutput forward(const RankerModel& model, const RankSample& sample);
std::vector<RankerOutput> forward_batch(const RankerModel& model, std::span<const RankSample> samples);

// Mean over the batch of the per-sample BCE summed over tasks.
double loss_and_grad(RankerModel& model, std::span<const RankSample> batch);
double batch_loss(const RankerModel& model, std::span<const RankSample> batch);
double train_step(RankerModel& model, std::span<const RankSample> batch, const nn::AdamConfig& adam);

struct TrainOptions {
  std::size_t epochs = 3;
  std::size_t batch = 64;
  nn::AdamConfig adam{.lr = 3e-3};
  std::uint64_t seed = 0;
};
// Shuffled epochs; returns per-step losses. Throws NumericError on a non-finite loss.
std::vector<double> train(RankerModel& model, std::span<const RankSample> samples, const TrainOptions& options);

struct Candidate {
  std::int64_t author_id = 0;
  std::vector<double> history;
  std::vector<double> foresight;
};

struct ScoredCandidate {
  std::int64_t author_id;
  double score;
};

// Descending by the chosen task's probability; ties by ascending author_id.
std::vector<ScoredCandidate> score(const RankerModel& model, std::int64_t user_id, std::span<const Candidate> candidates,
                                   Task task = Task::Ctr);

void save(const RankerModel& model, const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar);
RankerModel load(const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar);

}  // namespace foresight::ranker
