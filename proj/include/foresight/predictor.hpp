// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foresight/params.hpp"
#include "foresight/quantizer.hpp"
#include "foresight/seqstore.hpp"
#include "foresight/tape.hpp"

namespace foresight::predictor {

using quant::Sid;
using seqstore::HistoryWindow;

// How the encoder output is reduced to the exported history feature.
enum class HistoryPool : std::uint8_t {
  Mean,  // mean over valid positions
  Last,  // encoder output at the most recent run
};

struct PredictorConfig {
  std::size_t d_model = 32;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t window = 32;       // l_max
  std::size_t num_codes = 64;    // N
  std::size_t freq_cap = 512;    // F_max
  std::size_t heads = 1;
  std::size_t ffn_hidden = 64;
  bool rms_norm = false;         // post-block RMS normalization
  bool zero_init_output = true;  // BOS row, decoder output projections and FFN outputs start at 0
  double table_rms = 0.5;        // RMS of initial Sid-table entries
  HistoryPool history_pool = HistoryPool::Mean;
  std::uint64_t seed = 0;

  Sid pad_code() const { return static_cast<Sid>(num_codes); }
  std::size_t bos_row() const { return num_codes + 1; }
  void validate() const;
  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

struct ForesightOutput {
  std::vector<double> history_encoding;     // encoder output reduced per PredictorConfig::history_pool
  std::vector<double> foresight_embedding;  // decoder output
  std::vector<double> probs;                // over the N real Sids
  Sid predicted = 0;                        // argmax(probs), lowest index on ties
};

struct TrainExample {
  HistoryWindow window;
  Sid target = 0;
};

// Encoder-decoder next-Sid model. Parameters:
//   sid_table  (N+2) x d   rows N, N+1 = pad, BOS; rows [0, N) double as classifier weights
//   freq_table (F_max+1) x d, row 0 = pad
//   pos_table  window x d
//   enc.<i>.{wq,wk,wv,wo,w1,b1,w2,b2}, dec.<i>.{...}
class PredictorModel {
 public:
  // Random init. With a codebook, rows [0, N) of sid_table are its centroids
  // under a fixed random projection to d_model.
  explicit PredictorModel(const PredictorConfig& config, const quant::Codebook* codebook = nullptr);
  // Wraps loaded parameters; throws IntegrityError if shapes disagree with config.
  PredictorModel(const PredictorConfig& config, nn::ParamStore params);

  const PredictorConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Graph builders on a tape bound to params().
  nn::Var embed_window(nn::Tape& tape, const HistoryWindow& window) const;
  nn::Var encode(nn::Tape& tape, nn::Var embedded, std::span<const std::uint8_t> mask) const;
  nn::Var decode(nn::Tape& tape, nn::Var encoded, std::span<const std::uint8_t> mask) const;
  nn::Var logits(nn::Tape& tape, nn::Var d_hat) const;
  // Cross-entropy of one example.
  nn::Var example_loss(nn::Tape& tape, const TrainExample& example) const;

 private:
  void check_window(const HistoryWindow& window) const;
  nn::Var block_norm(nn::Tape& tape, nn::Var x) const;

  PredictorConfig config_;
  nn::ParamStore params_;
};

// Value-level wrappers (each runs a private forward-only tape).
nn::Tensor embed_window(const PredictorModel& model, const HistoryWindow& window);
nn::Tensor encode(const PredictorModel& model, const nn::Tensor& embedded, std::span<const std::uint8_t> mask);
nn::Tensor decode(const PredictorModel& model, const nn::Tensor& encoded, std::span<const std::uint8_t> mask);
std::vector<double> classify(const PredictorModel& model, std::span<const double> d_hat);

// Index of the maximum, lowest index on ties.
std::size_t argmax(std::span<const double> values);

// Mean cross-entropy over the batch; adds d(loss)/d(param) into params().grad.
double loss_and_grad(PredictorModel& model, std::span<const TrainExample> batch);
// Mean cross-entropy without touching gradients.
double batch_loss(const PredictorModel& model, std::span<const TrainExample> batch);
// loss_and_grad followed by one Adam step; returns the pre-step loss.
double train_step(PredictorModel& model, std::span<const TrainExample> batch, const nn::AdamConfig& adam);

// Inference pass; never mutates the model.
ForesightOutput predict_next(const PredictorModel& model, const HistoryWindow& window);

// Next-run examples from one author's sequence: for every run k >= 1 whose
// first raw segment index lies in [begin_segment, end_segment), context =
// the up-to-`window` runs before k, target = distinct[k].
std::vector<TrainExample> make_examples(const seqstore::CompressedSidSequence& seq, std::size_t window, Sid pad_code,
                                        std::uint64_t begin_segment, std::uint64_t end_segment);

struct TrainOptions {
  std::size_t steps = 1000;
  std::size_t batch = 32;
  nn::AdamConfig adam{};
  std::uint64_t seed = 0;
  // Called every step with (step, loss); return false to stop early.
  std::function<bool(std::size_t, double)> on_step;
};

// Shuffled mini-batch training; returns per-step losses.
std::vector<double> train(PredictorModel& model, std::span<const TrainExample> examples, const TrainOptions& options);

// Checkpoint plus JSON sidecar recording the config and the codebook hash the
// model was trained against.
void save(const PredictorModel& model, const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar,
          const std::string& codebook_hash);
// Throws IntegrityError if expected_codebook_hash is given and differs from the sidecar.
PredictorModel load(const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar,
                    const std::optional<std::string>& expected_codebook_hash);

}  // namespace foresight::predictor
