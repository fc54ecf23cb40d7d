// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "foresight/error.hpp"
#include "foresight/io.hpp"
#include "foresight/metrics.hpp"

namespace foresight::eval {

void SplitFractions::validate() const {
  for (double f : {train, valid, test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(train + valid + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (train <= 0.0 || test <= 0.0) throw ConfigError("train and test fractions must be positive");
}

SplitPoints split_points(std::uint64_t stream_length, const SplitFractions& fractions) {
  fractions.validate();
  const auto len = static_cast<double>(stream_length);
  SplitPoints s;
  s.train_end = static_cast<std::uint64_t>(std::floor(len * fractions.train));
  s.test_begin = static_cast<std::uint64_t>(std::floor(len * (fractions.train + fractions.valid)));
  s.test_begin = std::max(s.test_begin, s.train_end);
  return s;
}

quant::Codebook fit_codebook(std::span<const std::vector<synth::SegmentEvent>> streams,
                             const SplitFractions& fractions, const quant::KMeansConfig& config) {
  std::vector<synth::SegmentEvent> train;
  for (const auto& stream : streams) {
    const auto sp = split_points(stream.size(), fractions);
    train.insert(train.end(), stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(sp.train_end));
  }
  return quant::train_kmeans(quant::PointSet::from_segments(train), config);
}

std::vector<quant::QuantizedSegment> quantize_corpus(std::span<const std::vector<synth::SegmentEvent>> streams,
                                                     const quant::Codebook& codebook) {
  std::vector<quant::QuantizedSegment> out;
  for (const auto& stream : streams) {
    auto q = quant::quantize_stream(stream, codebook);
    out.insert(out.end(), q.begin(), q.end());
  }
  return out;
}

SidCorpus build_sid_corpus(std::span<const quant::QuantizedSegment> segments) {
  SidCorpus out;
  for (const auto& s : segments) {
    auto& raw = out.raw[s.author_id];
    if (s.seq_index != raw.size()) throw InvalidArgument("build_sid_corpus: segments must be contiguous and ordered");
    raw.push_back(s.sid);
  }
  for (const auto& [author, raw] : out.raw) out.compressed[author] = seqstore::compress(raw);
  return out;
}

std::vector<predictor::TrainExample> training_examples(const SidCorpus& sids, std::size_t l_max, Sid pad_code,
                                                       const SplitFractions& fractions) {
  std::vector<predictor::TrainExample> out;
  for (const auto& [author, seq] : sids.compressed) {
    const auto sp = split_points(seq.total_len, fractions);
    auto ex = predictor::make_examples(seq, l_max, pad_code, 0, sp.train_end);
    out.insert(out.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  return out;
}

HistoryWindow window_at(std::span<const Sid> raw, std::uint64_t t, std::size_t l_max, Sid pad_code) {
  if (t >= raw.size()) throw InvalidArgument("window_at: position beyond stream");
  if (l_max < 1) throw InvalidArgument("window_at: l_max must be >= 1");
  std::vector<Sid> sids;
  std::vector<std::uint32_t> freqs;
  std::int64_t i = static_cast<std::int64_t>(t);
  while (i >= 0 && sids.size() < l_max) {
    const Sid s = raw[static_cast<std::size_t>(i)];
    std::uint32_t n = 0;
    while (i >= 0 && raw[static_cast<std::size_t>(i)] == s) {
      ++n;
      --i;
    }
    sids.push_back(s);
    freqs.push_back(n);
  }
  HistoryWindow w;
  w.pad_code = pad_code;
  w.valid_len = sids.size();
  w.sids.assign(l_max - sids.size(), pad_code);
  w.freqs.assign(l_max - sids.size(), 0);
  w.sids.insert(w.sids.end(), sids.rbegin(), sids.rend());
  w.freqs.insert(w.freqs.end(), freqs.rbegin(), freqs.rend());
  return w;
}

std::vector<EvalWindow> eval_windows(const seqstore::CompressedSidSequence& seq, std::span<const std::int32_t> topics,
                                     std::size_t l_max, Sid pad_code, std::uint64_t begin, std::uint64_t end) {
  if (!topics.empty() && topics.size() != seq.total_len)
    throw InvalidArgument("eval_windows: ground truth length differs from stream length");
  std::vector<EvalWindow> out;
  std::uint64_t start = 0;
  for (std::size_t k = 0; k < seq.runs(); ++k) {
    if (k >= 1 && start >= begin && start < end) {
      EvalWindow e;
      e.window = seqstore::make_window(seq, k, l_max, pad_code);
      e.target = seq.distinct[k];
      if (!topics.empty()) e.current_topic = topics[start - 1];
      out.push_back(std::move(e));
    }
    start += seq.freq[k];
  }
  return out;
}

std::vector<StrategyAccuracy> evaluate_strategies(const predictor::PredictorModel& model,
                                                  std::span<const EvalWindow> windows, std::size_t l_raw,
                                                  const OracleInputs* oracle) {
  if (windows.empty()) throw InvalidArgument("evaluate_strategies: no windows");
  const std::size_t n = windows.size();
  std::vector<Sid> targets(n), pm(n), last(n), freq(n), weight(n), bayes(n);
  bool have_truth = oracle != nullptr && oracle->topic_model != nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = windows[i].window;
    targets[i] = windows[i].target;
    pm[i] = predictor::predict_next(model, w).predicted;
    last[i] = baseline_last(w);
    freq[i] = baseline_max_freq(w, l_raw);
    weight[i] = baseline_max_weight(w);
    if (have_truth) {
      if (windows[i].current_topic < 0) {
        have_truth = false;
      } else {
        bayes[i] = bayes_oracle(*oracle->topic_model, windows[i].current_topic, oracle->topic_to_sid,
                                OracleTarget::NextRun);
      }
    }
  }
  std::vector<StrategyAccuracy> out = {
      {"Model", accuracy(pm, targets)},
      {"Last", accuracy(last, targets)},
      {"MaxFreq", accuracy(freq, targets)},
      {"MaxWeight", accuracy(weight, targets)},
      {"Bayes", std::nullopt},
  };
  if (have_truth) out.back().accuracy = accuracy(bayes, targets);
  return out;
}

std::vector<predictor::ForesightOutput> interaction_features(const predictor::PredictorModel& model,
                                                             const SidCorpus& sids,
                                                             std::span<const synth::InteractionRecord> interactions) {
  const auto& cfg = model.config();
  std::map<std::pair<std::int64_t, std::uint32_t>, std::size_t> first;
  std::vector<predictor::ForesightOutput> out;
  out.reserve(interactions.size());
  for (const auto& rec : interactions) {
    const auto key = std::make_pair(rec.author_id, rec.at_seq_index);
    if (auto it = first.find(key); it != first.end()) {
      out.push_back(out[it->second]);
      continue;
    }
    const auto raw = sids.raw.find(rec.author_id);
    if (raw == sids.raw.end()) throw InvalidArgument("interaction_features: unknown author " + std::to_string(rec.author_id));
    const auto w = window_at(raw->second, rec.at_seq_index, cfg.window, cfg.pad_code());
    first.emplace(key, out.size());
    out.push_back(predictor::predict_next(model, w));
  }
  return out;
}

std::span<const Arm> standard_arms() {
  static const std::array<Arm, 3> arms = {{
      {"base", {false, false}},
      {"+history", {true, false}},
      {"+history+foresight", {true, true}},
  }};
  return arms;
}

const Arm& arm_by_name(const std::string& name) {
  for (const auto& a : standard_arms()) {
    if (a.name == name) return a;
  }
  throw ConfigError("unknown arm '" + name + "' (expected base, +history or +history+foresight)");
}

InteractionSplit split_interactions(std::span<const synth::InteractionRecord> interactions,
                                    const std::map<std::int64_t, std::uint64_t>& stream_lengths,
                                    const SplitFractions& fractions) {
  InteractionSplit out;
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    const auto& rec = interactions[i];
    const auto len = stream_lengths.find(rec.author_id);
    if (len == stream_lengths.end()) throw InvalidArgument("split_interactions: unknown author");
    const auto sp = split_points(len->second, fractions);
    if (rec.at_seq_index + 1 < sp.train_end) {
      out.train.push_back(i);
    } else if (rec.at_seq_index >= sp.test_begin) {
      out.test.push_back(i);
    }
  }
  return out;
}

std::vector<ranker::RankSample> build_samples(std::span<const synth::InteractionRecord> interactions,
                                              std::span<const predictor::ForesightOutput> features,
                                              std::span<const std::size_t> index, const ranker::FeatureFlags& flags) {
  if (features.size() != interactions.size()) throw InvalidArgument("build_samples: feature count mismatch");
  std::vector<ranker::RankSample> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(ranker::build_sample(interactions[i], features[i], flags));
  return out;
}

ArmResult evaluate_arm(const ranker::RankerModel& trained, const std::string& name,
                       std::span<const ranker::RankSample> test) {
  ArmResult r;
  r.name = name;
  r.ok = true;
  const auto outputs = ranker::forward_batch(trained, test);
  for (std::size_t t = 0; t < synth::kNumTasks; ++t) {
    std::vector<ScoredExample> scored(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      scored[i] = {test[i].user_id, outputs[i].probs[t], static_cast<std::uint8_t>(test[i].labels[t] > 0.5)};
    }
    r.tasks[t] = {auc(scored), gauc(scored)};
  }
  return r;
}

ArmResult run_arm(const Arm& arm, const ranker::RankerConfig& base_config, const ranker::TrainOptions& options,
                  std::span<const synth::InteractionRecord> interactions,
                  std::span<const predictor::ForesightOutput> features, const InteractionSplit& split,
                  ranker::RankerModel* trained_out) {
  auto cfg = base_config;
  cfg.flags = arm.flags;
  const auto train = build_samples(interactions, features, split.train, arm.flags);
  const auto test = build_samples(interactions, features, split.test, arm.flags);
  ranker::RankerModel model(cfg);
  std::vector<double> losses;
  try {
    losses = ranker::train(model, train, options);
  } catch (const NumericError& e) {
    ArmResult r;
    r.name = arm.name;
    r.error = e.what();
    return r;
  }
  auto r = evaluate_arm(model, arm.name, test);
  r.final_loss = losses.empty() ? 0.0 : losses.back();
  if (trained_out != nullptr) *trained_out = std::move(model);
  return r;
}

std::vector<ArmResult> run_ablation(const ranker::RankerConfig& base_config, const ranker::TrainOptions& options,
                                    std::span<const synth::InteractionRecord> interactions,
                                    std::span<const predictor::ForesightOutput> features,
                                    const InteractionSplit& split) {
  std::vector<ArmResult> out;
  for (const auto& arm : standard_arms()) out.push_back(run_arm(arm, base_config, options, interactions, features, split));
  return out;
}

namespace {

std::string fixed(std::optional<double> v, int digits = 4) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << *v;
  return s.str();
}

std::string signed_fixed(std::optional<double> v, int digits = 4) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::showpos << std::fixed << std::setprecision(digits) << *v;
  return s.str();
}

std::optional<double> delta(std::optional<double> a, std::optional<double> b) {
  if (!a || !b) return std::nullopt;
  return *a - *b;
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i == 0) {
        line += r[i] + std::string(width[i] - r[i].size(), ' ');
      } else {
        line += "  " + std::string(width[i] - r[i].size(), ' ') + r[i];
      }
    }
    out << line << '\n';
  }
  return out.str();
}

const ArmResult* base_arm(const EvalReport& report) {
  for (const auto& a : report.arms) {
    if (a.name == "base" && a.ok) return &a;
  }
  return nullptr;
}

}  // namespace

std::string format_text(const EvalReport& report) {
  std::ostringstream out;
  out << "Foresight evaluation report\n";
  out << "config " << report.config_hash << "  seed " << report.seed << "\n\n";

  out << "Ranking (held-out interactions: " << report.test_interactions << ", training: " << report.train_interactions
      << ")\n";
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"arm"};
  for (auto t : synth::kTasks) {
    header.push_back(std::string(synth::task_name(t)) + " AUC");
    header.push_back(std::string(synth::task_name(t)) + " GAUC");
  }
  rows.push_back(header);
  const ArmResult* base = base_arm(report);
  for (const auto& a : report.arms) {
    std::vector<std::string> row = {a.name};
    for (std::size_t t = 0; t < synth::kNumTasks; ++t) {
      if (!a.ok) {
        row.push_back("failed");
        row.push_back("failed");
      } else if (base != nullptr && &a != base) {
        row.push_back(signed_fixed(delta(a.tasks[t].auc, base->tasks[t].auc)));
        row.push_back(signed_fixed(delta(a.tasks[t].gauc, base->tasks[t].gauc)));
      } else {
        row.push_back(fixed(a.tasks[t].auc));
        row.push_back(fixed(a.tasks[t].gauc));
      }
    }
    rows.push_back(row);
  }
  out << render(rows);
  out << "(non-base rows are deltas vs base)\n";
  for (const auto& a : report.arms) {
    if (!a.ok) out << "arm " << a.name << " failed: " << a.error << '\n';
  }

  out << "\nNext-Sid prediction accuracy (windows: " << report.eval_windows << ")\n";
  rows.clear();
  rows.push_back({"strategy", "accuracy"});
  for (const auto& s : report.strategies) rows.push_back({s.name, fixed(s.accuracy)});
  out << render(rows);
  return out.str();
}

std::string format_tsv(const EvalReport& report) {
  std::ostringstream out;
  auto num = [](std::optional<double> v) { return v ? io::format_double(*v) : std::string("n/a"); };
  out << "# schema\t" << kReportSchema << '\n';
  out << "meta\tconfig_hash\t-\t" << report.config_hash << '\n';
  out << "meta\tseed\t-\t" << report.seed << '\n';
  out << "meta\teval_windows\t-\t" << report.eval_windows << '\n';
  out << "meta\ttrain_interactions\t-\t" << report.train_interactions << '\n';
  out << "meta\ttest_interactions\t-\t" << report.test_interactions << '\n';
  const ArmResult* base = base_arm(report);
  for (const auto& a : report.arms) {
    if (!a.ok) {
      out << "arm\t" << a.name << "\tstatus\tfailed\n";
      continue;
    }
    out << "arm\t" << a.name << "\tstatus\tok\n";
    for (std::size_t t = 0; t < synth::kNumTasks; ++t) {
      const std::string task(synth::task_name(synth::kTasks[t]));
      out << "arm\t" << a.name << '\t' << task << "_auc\t" << num(a.tasks[t].auc) << '\n';
      out << "arm\t" << a.name << '\t' << task << "_gauc\t" << num(a.tasks[t].gauc) << '\n';
      if (base != nullptr) {
        out << "arm\t" << a.name << '\t' << task << "_auc_delta\t" << num(delta(a.tasks[t].auc, base->tasks[t].auc))
            << '\n';
        out << "arm\t" << a.name << '\t' << task << "_gauc_delta\t"
            << num(delta(a.tasks[t].gauc, base->tasks[t].gauc)) << '\n';
      }
    }
  }
  for (const auto& s : report.strategies) out << "strategy\t" << s.name << "\taccuracy\t" << num(s.accuracy) << '\n';
  return out.str();
}

}  // namespace foresight::eval
