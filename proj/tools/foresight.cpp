// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver for the foresight pipeline.
//
//   foresight <stage> --config PATH [--force] [--seed INT] [--arm NAME]
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 integrity error,
// 4 numeric failure.

#include <CLI11.hpp>
#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "foresight/error.hpp"
#include "foresight/io.hpp"
#include "foresight/pipeline.hpp"

namespace {

using namespace foresight;

void print(const pipeline::StageResult& r) {
  if (r.skipped) {
    std::cout << r.stage << ": up to date\n";
  } else {
    std::cout << r.stage << ": done in " << std::fixed << std::setprecision(2) << r.wall_seconds << " s\n";
  }
}

std::optional<std::uint64_t> effective_seed(const std::optional<std::int64_t>& flag) {
  if (flag) {
    if (*flag < 0) throw ConfigError("--seed must be non-negative");
    return static_cast<std::uint64_t>(*flag);
  }
  if (const char* env = std::getenv("FORESIGHT_SEED"); env != nullptr && *env != '\0') {
    std::int64_t v = 0;
    try {
      v = io::parse_int(env);
    } catch (const Error&) {
      throw ConfigError(std::string("FORESIGHT_SEED is not an integer: ") + env);
    }
    if (v < 0) throw ConfigError("FORESIGHT_SEED must be non-negative");
    return static_cast<std::uint64_t>(v);
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foresight pipeline: synthetic corpus, semantic ids, next-Sid prediction, multi-task ranking"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  std::optional<std::int64_t> seed;
  std::optional<std::string> arm;

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"gen", "generate the synthetic corpus"},
      {"train-quantizer", "fit the K-Means codebook"},
      {"quantize", "map segments to Sids and build the append log"},
      {"train-predictor", "train the next-Sid predictor"},
      {"train-ranker", "train one ranker per ablation arm"},
      {"evaluate", "write the evaluation report"},
      {"report", "print the evaluation report"},
      {"all", "run every stage in order"},
  };
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "pipeline config file")->required()->check(CLI::ExistingFile);
    sub->add_flag("--force", force, "rerun even when the manifest says the stage is up to date");
    sub->add_option("--seed", seed, "global seed (overrides FORESIGHT_SEED and the config)");
    sub->add_option("--arm", arm, "restrict to one ablation arm: base, +history, +history+foresight");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto config = pipeline::load_config(config_path, effective_seed(seed));
    const pipeline::RunOptions options{force, arm};
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen") {
      print(pipeline::cmd_gen(config, options));
    } else if (cmd == "train-quantizer") {
      print(pipeline::cmd_train_quantizer(config, options));
    } else if (cmd == "quantize") {
      print(pipeline::cmd_quantize(config, options));
    } else if (cmd == "train-predictor") {
      print(pipeline::cmd_train_predictor(config, options));
    } else if (cmd == "train-ranker") {
      for (const auto& r : pipeline::cmd_train_ranker(config, options)) print(r);
    } else if (cmd == "evaluate") {
      print(pipeline::cmd_evaluate(config, options));
    } else if (cmd == "report") {
      std::cout << pipeline::cmd_report(config);
    } else {
      for (const auto& r : pipeline::run_all(config, options)) print(r);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
