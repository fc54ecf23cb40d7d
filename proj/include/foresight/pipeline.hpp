// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "foresight/experiment.hpp"
#include "foresight/predictor.hpp"
#include "foresight/quantizer.hpp"
#include "foresight/ranker.hpp"
#include "foresight/synth.hpp"

namespace foresight::pipeline {

namespace fs = std::filesystem;

struct Paths {
  fs::path out_dir;
  fs::path segments;
  fs::path interactions;
  fs::path ground_truth;
  fs::path topic_model;
  fs::path codebook;
  fs::path sid_log;
  fs::path store_snapshot;
  fs::path predictor;
  fs::path predictor_meta;
  fs::path ranker_dir;
  fs::path report_text;
  fs::path report_tsv;
  fs::path manifest;

  fs::path ranker_checkpoint(const std::string& arm) const;
  fs::path ranker_meta(const std::string& arm) const;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  synth::CorpusConfig corpus;
  bool binary_segments = false;
  quant::KMeansConfig kmeans;  // seed is derived per stage
  std::size_t l_max = 32;
  std::size_t freq_cap = 512;
  predictor::PredictorConfig predictor;  // window, num_codes, freq_cap and seed filled in at use
  predictor::TrainOptions predictor_train;
  ranker::RankerConfig ranker;           // ids, widths and flags filled in at use
  ranker::TrainOptions ranker_train;
  eval::SplitFractions split;
  std::size_t l_raw = 0;                 // 0 = l_max
  Paths paths;
  // Canonical "key=value" text per section, used for stage config hashes.
  std::map<std::string, std::string> section_text;

  std::uint64_t stage_seed(const std::string& stage) const;
};

// Flat sectioned INI. Unknown sections or keys, bad values and violated
// invariants raise ConfigError. Relative paths resolve against the config
// file's directory. seed_override replaces [global] seed.
PipelineConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

// Per-stage record of input/output content hashes, config hash and wall time.
class Manifest {
 public:
  // Paths are stored relative to the manifest's directory when inside it.
  struct Stage {
    std::string config_hash;
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // path -> sha256
    double wall_seconds = 0.0;
  };

  // Empty manifest if the file does not exist.
  static Manifest load(const fs::path& path);
  void save() const;

  const Stage* find(const std::string& stage) const;
  void record(const std::string& stage, const std::string& config_hash, const std::vector<fs::path>& inputs,
              const std::vector<fs::path>& outputs, double wall_seconds);
  // True when the stage is recorded with this config hash and exactly these
  // inputs at their recorded hashes, and every recorded output still exists
  // with its recorded hash.
  bool up_to_date(const std::string& stage, const std::string& config_hash, const std::vector<fs::path>& inputs) const;
  // Hash the stage recorded for one of its outputs, if any.
  std::optional<std::string> output_hash(const std::string& stage, const fs::path& output) const;

  std::string key(const fs::path& p) const;
  fs::path resolve(const std::string& key) const;

 private:
  fs::path path_;
  std::map<std::string, Stage> stages_;
};

struct RunOptions {
  bool force = false;
  std::optional<std::string> arm;  // restricts train-ranker / evaluate to one arm
};

// Outcome of one stage invocation.
struct StageResult {
  std::string stage;
  bool skipped = false;  // manifest short-circuit
  double wall_seconds = 0.0;
};

StageResult cmd_gen(const PipelineConfig& config, const RunOptions& options);
StageResult cmd_train_quantizer(const PipelineConfig& config, const RunOptions& options);
StageResult cmd_quantize(const PipelineConfig& config, const RunOptions& options);
StageResult cmd_train_predictor(const PipelineConfig& config, const RunOptions& options);
std::vector<StageResult> cmd_train_ranker(const PipelineConfig& config, const RunOptions& options);
StageResult cmd_evaluate(const PipelineConfig& config, const RunOptions& options);
// Text report as written by evaluate.
std::string cmd_report(const PipelineConfig& config);

// Every stage in order.
std::vector<StageResult> run_all(const PipelineConfig& config, const RunOptions& options);

// Codebook whose file hash must match what train-quantizer recorded; throws IntegrityError otherwise.
quant::Codebook load_codebook_checked(const PipelineConfig& config);

}  // namespace foresight::pipeline
