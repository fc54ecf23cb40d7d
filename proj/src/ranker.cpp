// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/ranker.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "foresight/error.hpp"
#include "foresight/io.hpp"

namespace foresight::ranker {

namespace {

using nn::Tape;
using nn::Tensor;
using nn::Var;

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

std::string indexed(const char* prefix, std::size_t i, const char* what) {
  return std::string(prefix) + "." + std::to_string(i) + "." + what;
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

void RankerConfig::validate() const {
  if (num_experts < 1) throw ConfigError("ranker: num_experts must be >= 1");
  if (id_dim < 1 || feature_dim < 1) throw ConfigError("ranker: embedding widths must be >= 1");
  if (expert_hidden < 1 || expert_out < 1 || tower_hidden < 1) throw ConfigError("ranker: layer widths must be >= 1");
  if (!(prob_eps > 0.0 && prob_eps < 0.5)) throw ConfigError("ranker: prob_eps must be in (0, 0.5)");
}

RankSample build_sample(const synth::InteractionRecord& interaction, const predictor::ForesightOutput& features,
                        const FeatureFlags& flags) {
  RankSample s;
  s.user_id = interaction.user_id;
  s.author_id = interaction.author_id;
  const std::size_t width = features.foresight_embedding.size();
  s.history = flags.use_history ? features.history_encoding : std::vector<double>(width, 0.0);
  s.foresight = flags.use_foresight ? features.foresight_embedding : std::vector<double>(width, 0.0);
  for (std::size_t t = 0; t < kNumTasks; ++t) s.labels[t] = interaction.labels[t];
  return s;
}

RankerModel::RankerModel(const RankerConfig& config) : config_(config) {
  config_.validate();
  const auto& c = config_;
  std::mt19937_64 rng(c.seed);
  const std::size_t in = c.input_dim();
  params_.add("user_table", gaussian(c.num_users + 1, c.id_dim, 0.1, rng));
  params_.add("author_table", gaussian(c.num_authors + 1, c.id_dim, 0.1, rng));
  for (std::size_t k = 0; k < c.num_experts; ++k) {
    params_.add(indexed("expert", k, "w1"), gaussian(in, c.expert_hidden, std::sqrt(2.0 / static_cast<double>(in)), rng));
    params_.add(indexed("expert", k, "b1"), Tensor({1, c.expert_hidden}));
    params_.add(indexed("expert", k, "w2"),
                gaussian(c.expert_hidden, c.expert_out, std::sqrt(2.0 / static_cast<double>(c.expert_hidden)), rng));
    params_.add(indexed("expert", k, "b2"), Tensor({1, c.expert_out}));
  }
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    params_.add(indexed("gate", t, "w"), gaussian(in, c.num_experts, 0.01, rng));
    params_.add(indexed("gate", t, "b"), Tensor({1, c.num_experts}));
    params_.add(indexed("tower", t, "w1"),
                gaussian(c.expert_out, c.tower_hidden, std::sqrt(2.0 / static_cast<double>(c.expert_out)), rng));
    params_.add(indexed("tower", t, "b1"), Tensor({1, c.tower_hidden}));
    params_.add(indexed("tower", t, "w2"),
                c.zero_init_towers ? Tensor({c.tower_hidden, 1})
                                   : gaussian(c.tower_hidden, 1, 1.0 / std::sqrt(static_cast<double>(c.tower_hidden)), rng));
    params_.add(indexed("tower", t, "b2"), Tensor({1, 1}));
  }
}

RankerModel::RankerModel(const RankerConfig& config, nn::ParamStore params) : config_(config), params_(std::move(params)) {
  config_.validate();
  RankerModel reference(config_);
  if (reference.params().size() != params_.size()) throw IntegrityError("ranker checkpoint tensor count mismatch");
  for (const auto& [name, p] : reference.params()) {
    if (!params_.contains(name)) throw IntegrityError("ranker checkpoint lacks " + name);
    if (params_.at(name).value.shape() != p.value.shape()) throw IntegrityError("ranker checkpoint shape mismatch for " + name);
  }
}

std::size_t RankerModel::user_row(std::int64_t id) const {
  return (id >= 0 && static_cast<std::size_t>(id) < config_.num_users) ? static_cast<std::size_t>(id) : config_.num_users;
}

std::size_t RankerModel::author_row(std::int64_t id) const {
  return (id >= 0 && static_cast<std::size_t>(id) < config_.num_authors) ? static_cast<std::size_t>(id)
                                                                           : config_.num_authors;
}

RankerModel::Graph RankerModel::build(Tape& tape, std::span<const RankSample> batch) const {
  const auto& c = config_;
  if (batch.empty()) throw InvalidArgument("ranker: empty batch");
  const std::size_t b = batch.size();
  std::vector<std::size_t> users(b), authors(b);
  Tensor hist({b, c.feature_dim}), fore({b, c.feature_dim});
  for (std::size_t i = 0; i < b; ++i) {
    const auto& s = batch[i];
    if (s.history.size() != c.feature_dim || s.foresight.size() != c.feature_dim) {
      throw InvalidArgument("ranker: feature width " + std::to_string(s.history.size()) + "/" +
                            std::to_string(s.foresight.size()) + " != configured " + std::to_string(c.feature_dim));
    }
    users[i] = user_row(s.user_id);
    authors[i] = author_row(s.author_id);
    std::copy(s.history.begin(), s.history.end(), hist.row(i).begin());
    std::copy(s.foresight.begin(), s.foresight.end(), fore.row(i).begin());
  }
  const std::array<Var, 4> parts = {tape.gather_rows(tape.param("user_table"), users),
                                    tape.gather_rows(tape.param("author_table"), authors), tape.leaf(std::move(hist)),
                                    tape.leaf(std::move(fore))};
  auto x = tape.concat_cols(parts);

  std::vector<Var> experts;
  for (std::size_t k = 0; k < c.num_experts; ++k) {
    auto p = [&](const char* w) { return tape.param(indexed("expert", k, w)); };
    experts.push_back(tape.relu(nn::ffn(tape, x, p("w1"), p("b1"), p("w2"), p("b2"))));
  }
  Graph g;
  std::vector<Var> task_logits;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    auto gate = tape.softmax_rows(tape.add_row(tape.matmul(x, tape.param(indexed("gate", t, "w"))),
                                               tape.param(indexed("gate", t, "b"))));
    g.gates[t] = gate;
    Var mix = tape.mul_col(experts[0], tape.slice_cols(gate, 0, 1));
    for (std::size_t k = 1; k < c.num_experts; ++k) {
      mix = tape.add(mix, tape.mul_col(experts[k], tape.slice_cols(gate, k, k + 1)));
    }
    auto p = [&](const char* w) { return tape.param(indexed("tower", t, w)); };
    task_logits.push_back(nn::ffn(tape, mix, p("w1"), p("b1"), p("w2"), p("b2")));
  }
  g.logits = tape.concat_cols(task_logits);
  return g;
}

std::vector<RankerOutput> forward_batch(const RankerModel& model, std::span<const RankSample> samples) {
  Tape tape(&model.params());
  auto g = model.build(tape, samples);
  const auto& logits = tape.value(g.logits);
  const double eps = model.config().prob_eps;
  std::vector<RankerOutput> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      out[i].probs[t] = std::clamp(sigmoid(logits(i, t)), eps, 1.0 - eps);
      const auto gate = tape.value(g.gates[t]).row(i);
      out[i].gates[t].assign(gate.begin(), gate.end());
    }
  }
  return out;
}

RankerOutput forward(const RankerModel& model, const RankSample& sample) {
  return forward_batch(model, std::span<const RankSample>(&sample, 1)).front();
}

namespace {

std::vector<double> flat_labels(std::span<const RankSample> batch) {
  std::vector<double> labels;
  labels.reserve(batch.size() * kNumTasks);
  for (const auto& s : batch) labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  return labels;
}

}  // namespace

double loss_and_grad(RankerModel& model, std::span<const RankSample> batch) {
  Tape tape(&model.params());
  auto g = model.build(tape, batch);
  auto loss = tape.scale(tape.bce_with_logits(g.logits, flat_labels(batch), model.config().prob_eps),
                         1.0 / static_cast<double>(batch.size()));
  tape.backward(loss);
  tape.accumulate_param_grads(model.params());
  return tape.value(loss)[0];
}

double batch_loss(const RankerModel& model, std::span<const RankSample> batch) {
  Tape tape(&model.params());
  auto g = model.build(tape, batch);
  return tape.value(tape.bce_with_logits(g.logits, flat_labels(batch), model.config().prob_eps))[0] /
         static_cast<double>(batch.size());
}

double train_step(RankerModel& model, std::span<const RankSample> batch, const nn::AdamConfig& adam) {
  const double loss = loss_and_grad(model, batch);
  nn::adam_step(model.params(), adam);
  return loss;
}

std::vector<double> train(RankerModel& model, std::span<const RankSample> samples, const TrainOptions& options) {
  if (samples.empty()) throw InvalidArgument("ranker: no training samples");
  if (options.batch < 1) throw InvalidArgument("ranker: batch must be >= 1");
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  std::vector<RankSample> batch;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + options.batch); ++i) batch.push_back(samples[order[i]]);
      const double loss = train_step(model, batch, options.adam);
      if (!std::isfinite(loss)) throw NumericError("ranker training diverged in epoch " + std::to_string(epoch));
      losses.push_back(loss);
    }
  }
  return losses;
}

std::vector<ScoredCandidate> score(const RankerModel& model, std::int64_t user_id, std::span<const Candidate> candidates,
                                   Task task) {
  if (candidates.empty()) throw InvalidArgument("score: no candidates");
  std::vector<RankSample> samples;
  samples.reserve(candidates.size());
  for (const auto& c : candidates) {
    RankSample s;
    s.user_id = user_id;
    s.author_id = c.author_id;
    s.history = c.history;
    s.foresight = c.foresight;
    samples.push_back(std::move(s));
  }
  const auto outputs = forward_batch(model, samples);
  std::vector<ScoredCandidate> ranked;
  ranked.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ranked.push_back({candidates[i].author_id, outputs[i].probs[static_cast<std::size_t>(task)]});
  }
  std::sort(ranked.begin(), ranked.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.author_id < b.author_id;
  });
  return ranked;
}

void save(const RankerModel& model, const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar) {
  model.params().save(checkpoint);
  const auto& c = model.config();
  nlohmann::json meta = {{"format", "foresight-ranker"},
                         {"version", 1},
                         {"config",
                          {{"num_users", c.num_users},
                           {"num_authors", c.num_authors},
                           {"id_dim", c.id_dim},
                           {"feature_dim", c.feature_dim},
                           {"num_experts", c.num_experts},
                           {"expert_hidden", c.expert_hidden},
                           {"expert_out", c.expert_out},
                           {"tower_hidden", c.tower_hidden},
                           {"use_history", c.flags.use_history},
                           {"use_foresight", c.flags.use_foresight},
                           {"zero_init_towers", c.zero_init_towers},
                           {"prob_eps", c.prob_eps},
                           {"seed", c.seed}}},
                         {"checkpoint_hash", model.params().content_hash()}};
  io::write_text_atomic(sidecar, meta.dump(2) + "\n");
}

RankerModel load(const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_text(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("ranker sidecar " + sidecar.string() + " is not valid JSON: " + e.what());
  }
  if (meta.value("format", "") != "foresight-ranker") throw IntegrityError("not a ranker sidecar: " + sidecar.string());
  const auto& j = meta.at("config");
  RankerConfig c;
  c.num_users = j.at("num_users");
  c.num_authors = j.at("num_authors");
  c.id_dim = j.at("id_dim");
  c.feature_dim = j.at("feature_dim");
  c.num_experts = j.at("num_experts");
  c.expert_hidden = j.at("expert_hidden");
  c.expert_out = j.at("expert_out");
  c.tower_hidden = j.at("tower_hidden");
  c.flags.use_history = j.at("use_history");
  c.flags.use_foresight = j.at("use_foresight");
  c.zero_init_towers = j.at("zero_init_towers");
  c.prob_eps = j.at("prob_eps");
  c.seed = j.at("seed");
  auto params = nn::ParamStore::load(checkpoint);
  if (params.content_hash() != meta.at("checkpoint_hash").get<std::string>()) {
    throw IntegrityError("ranker checkpoint does not match its sidecar");
  }
  return RankerModel(c, std::move(params));
}

}  // namespace foresight::ranker
