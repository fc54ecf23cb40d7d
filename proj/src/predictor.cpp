// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/predictor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "foresight/error.hpp"
#include "foresight/io.hpp"

namespace foresight::predictor {

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

std::string layer_name(const char* stack, std::size_t i, const char* what) {
  return std::string(stack) + "." + std::to_string(i) + "." + what;
}

struct Expected {
  std::string name;
  std::vector<std::size_t> shape;
};

std::vector<Expected> expected_params(const PredictorConfig& c) {
  std::vector<Expected> out = {
      {"sid_table", {c.num_codes + 2, c.d_model}},
      {"freq_table", {c.freq_cap + 1, c.d_model}},
      {"pos_table", {c.window, c.d_model}},
  };
  auto add_stack = [&](const char* stack, std::size_t layers) {
    for (std::size_t i = 0; i < layers; ++i) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({layer_name(stack, i, w), {c.d_model, c.d_model}});
      out.push_back({layer_name(stack, i, "w1"), {c.d_model, c.ffn_hidden}});
      out.push_back({layer_name(stack, i, "b1"), {1, c.ffn_hidden}});
      out.push_back({layer_name(stack, i, "w2"), {c.ffn_hidden, c.d_model}});
      out.push_back({layer_name(stack, i, "b2"), {1, c.d_model}});
    }
  };
  add_stack("enc", c.enc_layers);
  add_stack("dec", c.dec_layers);
  return out;
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

void PredictorConfig::validate() const {
  if (d_model < 2) throw ConfigError("predictor: d_model must be >= 2");
  if (window < 1) throw ConfigError("predictor: window must be >= 1");
  if (num_codes < 2) throw ConfigError("predictor: num_codes must be >= 2");
  if (freq_cap < 1) throw ConfigError("predictor: freq_cap must be >= 1");
  if (ffn_hidden < 1) throw ConfigError("predictor: ffn_hidden must be >= 1");
  if (heads < 1 || d_model % heads != 0) throw ConfigError("predictor: heads must divide d_model");
  if (!(table_rms > 0.0)) throw ConfigError("predictor: table_rms must be > 0");
}

PredictorModel::PredictorModel(const PredictorConfig& config, const quant::Codebook* codebook) : config_(config) {
  config_.validate();
  const auto& c = config_;
  std::mt19937_64 rng(c.seed);
  const double d = static_cast<double>(c.d_model);

  Tensor sid_table = gaussian(c.num_codes + 2, c.d_model, c.table_rms, rng);
  if (codebook != nullptr) {
    if (codebook->size() != c.num_codes) {
      throw InvalidArgument("predictor: codebook has " + std::to_string(codebook->size()) + " codes, config expects " +
                            std::to_string(c.num_codes));
    }
    const std::size_t de = codebook->dim();
    Tensor proj = gaussian(de, c.d_model, 1.0 / std::sqrt(static_cast<double>(de)), rng);
    Tensor projected({c.num_codes, c.d_model});
    for (std::size_t s = 0; s < c.num_codes; ++s) {
      const auto row = codebook->centroid(s);
      for (std::size_t k = 0; k < de; ++k) {
        for (std::size_t j = 0; j < c.d_model; ++j) projected(s, j) += static_cast<double>(row[k]) * proj(k, j);
      }
    }
    // Centre, then rescale to the configured RMS so the table scale does not
    // depend on the embedding space.
    for (std::size_t j = 0; j < c.d_model; ++j) {
      double mean = 0.0;
      for (std::size_t s = 0; s < c.num_codes; ++s) mean += projected(s, j);
      mean /= static_cast<double>(c.num_codes);
      for (std::size_t s = 0; s < c.num_codes; ++s) projected(s, j) -= mean;
    }
    double ss = 0.0;
    for (double v : projected.data()) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(projected.size()));
    const double k = rms > 0.0 ? c.table_rms / rms : 1.0;
    for (std::size_t s = 0; s < c.num_codes; ++s) {
      for (std::size_t j = 0; j < c.d_model; ++j) sid_table(s, j) = k * projected(s, j);
    }
  }
  if (c.zero_init_output) {
    for (auto& v : sid_table.row(c.bos_row())) v = 0.0;
  }
  params_.add("sid_table", std::move(sid_table));
  params_.add("freq_table", gaussian(c.freq_cap + 1, c.d_model, 0.1, rng));
  params_.add("pos_table", gaussian(c.window, c.d_model, 0.1, rng));

  auto add_stack = [&](const char* stack, std::size_t layers, bool zero_out) {
    for (std::size_t i = 0; i < layers; ++i) {
      for (const char* w : {"wq", "wk", "wv"}) params_.add(layer_name(stack, i, w), gaussian(c.d_model, c.d_model, 1.0 / std::sqrt(d), rng));
      params_.add(layer_name(stack, i, "wo"), zero_out ? Tensor({c.d_model, c.d_model})
                                                       : gaussian(c.d_model, c.d_model, 1.0 / std::sqrt(d), rng));
      params_.add(layer_name(stack, i, "w1"), gaussian(c.d_model, c.ffn_hidden, std::sqrt(2.0 / d), rng));
      params_.add(layer_name(stack, i, "b1"), Tensor({1, c.ffn_hidden}));
      params_.add(layer_name(stack, i, "w2"),
                  zero_out ? Tensor({c.ffn_hidden, c.d_model})
                           : gaussian(c.ffn_hidden, c.d_model, 1.0 / std::sqrt(static_cast<double>(c.ffn_hidden)), rng));
      params_.add(layer_name(stack, i, "b2"), Tensor({1, c.d_model}));
    }
  };
  add_stack("enc", c.enc_layers, false);
  add_stack("dec", c.dec_layers, c.zero_init_output);
}

PredictorModel::PredictorModel(const PredictorConfig& config, nn::ParamStore params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto expected = expected_params(config_);
  if (expected.size() != params_.size()) {
    throw IntegrityError("predictor checkpoint has " + std::to_string(params_.size()) + " tensors, config implies " +
                         std::to_string(expected.size()));
  }
  for (const auto& e : expected) {
    if (!params_.contains(e.name)) throw IntegrityError("predictor checkpoint lacks " + e.name);
    if (params_.at(e.name).value.shape() != e.shape) {
      throw IntegrityError("predictor checkpoint tensor " + e.name + " has shape " +
                           nn::shape_string(params_.at(e.name).value.shape()) + ", expected " +
                           nn::shape_string(e.shape));
    }
  }
}

void PredictorModel::check_window(const HistoryWindow& w) const {
  const auto& c = config_;
  if (w.size() != c.window || w.freqs.size() != c.window) {
    throw InvalidArgument("predictor: window length " + std::to_string(w.size()) + " != configured " +
                          std::to_string(c.window));
  }
  if (w.valid_len > w.size()) throw InvalidArgument("predictor: valid_len exceeds window length");
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w.is_valid(i)) {
      if (w.sids[i] >= c.num_codes) {
        throw InvalidArgument("predictor: Sid " + std::to_string(w.sids[i]) + " out of range [0, " +
                              std::to_string(c.num_codes) + ")");
      }
      if (w.freqs[i] < 1) throw InvalidArgument("predictor: valid position with zero frequency");
    } else if (w.sids[i] != c.pad_code() || w.freqs[i] != 0) {
      throw InvalidArgument("predictor: pad position must carry the pad code and frequency 0");
    }
  }
}

Var PredictorModel::embed_window(Tape& tape, const HistoryWindow& w) const {
  check_window(w);
  const auto& c = config_;
  std::vector<std::size_t> sid_rows(w.sids.begin(), w.sids.end());
  std::vector<std::size_t> freq_rows(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) freq_rows[i] = std::min<std::size_t>(w.freqs[i], c.freq_cap);
  auto sids = tape.gather_rows(tape.param("sid_table"), sid_rows);
  auto freqs = tape.gather_rows(tape.param("freq_table"), freq_rows);
  return tape.add(tape.add(sids, freqs), tape.param("pos_table"));
}

Var PredictorModel::block_norm(Tape& tape, Var x) const { return config_.rms_norm ? tape.rms_norm_rows(x) : x; }

Var PredictorModel::encode(Tape& tape, Var x, std::span<const std::uint8_t> mask) const {
  if (std::none_of(mask.begin(), mask.end(), [](auto v) { return v != 0; })) {
    throw InvalidArgument("encode: window has no valid positions");
  }
  for (std::size_t i = 0; i < config_.enc_layers; ++i) {
    auto p = [&](const char* w) { return tape.param(layer_name("enc", i, w)); };
    auto q = tape.matmul(x, p("wq"));
    auto k = tape.matmul(x, p("wk"));
    auto v = tape.matmul(x, p("wv"));
    auto attn = tape.matmul(nn::attention(tape, q, k, v, mask, config_.heads), p("wo"));
    x = block_norm(tape, tape.add(x, attn));
    x = block_norm(tape, tape.add(x, nn::ffn(tape, x, p("w1"), p("b1"), p("w2"), p("b2"))));
  }
  return x;
}

Var PredictorModel::decode(Tape& tape, Var encoded, std::span<const std::uint8_t> mask) const {
  if (std::none_of(mask.begin(), mask.end(), [](auto v) { return v != 0; })) {
    throw InvalidArgument("decode: no valid encoder positions");
  }
  const std::size_t bos = config_.bos_row();
  auto d = tape.gather_rows(tape.param("sid_table"), std::span<const std::size_t>(&bos, 1));
  for (std::size_t i = 0; i < config_.dec_layers; ++i) {
    auto p = [&](const char* w) { return tape.param(layer_name("dec", i, w)); };
    auto q = tape.matmul(d, p("wq"));
    auto k = tape.matmul(encoded, p("wk"));
    auto v = tape.matmul(encoded, p("wv"));
    auto attn = tape.matmul(nn::attention(tape, q, k, v, mask, config_.heads), p("wo"));
    d = block_norm(tape, tape.add(d, attn));
    d = block_norm(tape, tape.add(d, nn::ffn(tape, d, p("w1"), p("b1"), p("w2"), p("b2"))));
  }
  return d;
}

Var PredictorModel::logits(Tape& tape, Var d_hat) const {
  auto codes = tape.slice_rows(tape.param("sid_table"), 0, config_.num_codes);
  return tape.matmul_nt(d_hat, codes);
}

Var PredictorModel::example_loss(Tape& tape, const TrainExample& ex) const {
  if (ex.target >= config_.num_codes) throw InvalidArgument("predictor: target Sid out of range");
  const auto mask = ex.window.mask();
  auto enc = encode(tape, embed_window(tape, ex.window), mask);
  return tape.cross_entropy(logits(tape, decode(tape, enc, mask)), ex.target);
}

Tensor embed_window(const PredictorModel& model, const HistoryWindow& window) {
  Tape tape(&model.params());
  return tape.value(model.embed_window(tape, window));
}

Tensor encode(const PredictorModel& model, const Tensor& embedded, std::span<const std::uint8_t> mask) {
  Tape tape(&model.params());
  return tape.value(model.encode(tape, tape.leaf(embedded), mask));
}

Tensor decode(const PredictorModel& model, const Tensor& encoded, std::span<const std::uint8_t> mask) {
  Tape tape(&model.params());
  return tape.value(model.decode(tape, tape.leaf(encoded), mask));
}

std::vector<double> classify(const PredictorModel& model, std::span<const double> d_hat) {
  if (d_hat.size() != model.config().d_model) throw InvalidArgument("classify: d_hat width mismatch");
  Tape tape(&model.params());
  auto logits = model.logits(tape, tape.leaf(Tensor::row_vector(d_hat)));
  return to_vector(tape.value(tape.softmax_rows(logits)));
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double loss_and_grad(PredictorModel& model, std::span<const TrainExample> batch) {
  if (batch.empty()) throw InvalidArgument("predictor: empty batch");
  Tape tape(&model.params());
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const auto& ex : batch) losses.push_back(model.example_loss(tape, ex));
  Var total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = tape.add(total, losses[i]);
  auto mean = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
  tape.backward(mean);
  tape.accumulate_param_grads(model.params());
  return tape.value(mean)[0];
}

double batch_loss(const PredictorModel& model, std::span<const TrainExample> batch) {
  if (batch.empty()) throw InvalidArgument("predictor: empty batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    Tape tape(&model.params());
    total += tape.value(model.example_loss(tape, ex))[0];
  }
  return total / static_cast<double>(batch.size());
}

double train_step(PredictorModel& model, std::span<const TrainExample> batch, const nn::AdamConfig& adam) {
  const double loss = loss_and_grad(model, batch);
  nn::adam_step(model.params(), adam);
  return loss;
}

ForesightOutput predict_next(const PredictorModel& model, const HistoryWindow& window) {
  if (window.valid_len == 0) throw InvalidArgument("predict_next: empty window");
  Tape tape(&model.params());
  const auto mask = window.mask();
  auto enc = model.encode(tape, model.embed_window(tape, window), mask);
  auto d_hat = model.decode(tape, enc, mask);
  auto probs = tape.softmax_rows(model.logits(tape, d_hat));
  ForesightOutput out;
  const auto pooled = model.config().history_pool == HistoryPool::Mean
                          ? tape.masked_mean_rows(enc, mask)
                          : tape.slice_rows(enc, window.size() - 1, window.size());
  out.history_encoding = to_vector(tape.value(pooled));
  out.foresight_embedding = to_vector(tape.value(d_hat));
  out.probs = to_vector(tape.value(probs));
  out.predicted = static_cast<Sid>(argmax(out.probs));
  return out;
}

std::vector<TrainExample> make_examples(const seqstore::CompressedSidSequence& seq, std::size_t window, Sid pad_code,
                                        std::uint64_t begin_segment, std::uint64_t end_segment) {
  std::vector<TrainExample> out;
  std::uint64_t start = 0;
  for (std::size_t k = 0; k < seq.runs(); ++k) {
    if (k >= 1 && start >= begin_segment && start < end_segment) {
      out.push_back({seqstore::make_window(seq, k, window, pad_code), seq.distinct[k]});
    }
    start += seq.freq[k];
  }
  return out;
}

std::vector<double> train(PredictorModel& model, std::span<const TrainExample> examples, const TrainOptions& options) {
  if (examples.empty()) throw InvalidArgument("predictor: no training examples");
  if (options.batch < 1) throw InvalidArgument("predictor: batch must be >= 1");
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<double> losses;
  std::vector<TrainExample> batch;
  for (std::size_t step = 0; step < options.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(options.batch, examples.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(examples[order[cursor++]]);
    }
    const double loss = train_step(model, batch, options.adam);
    if (!std::isfinite(loss)) throw NumericError("predictor training diverged at step " + std::to_string(step));
    losses.push_back(loss);
    if (options.on_step && !options.on_step(step, loss)) break;
  }
  return losses;
}

namespace {

nlohmann::json config_json(const PredictorConfig& c) {
  return {{"d_model", c.d_model},   {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},
          {"window", c.window},     {"num_codes", c.num_codes},   {"freq_cap", c.freq_cap},
          {"heads", c.heads},       {"ffn_hidden", c.ffn_hidden}, {"rms_norm", c.rms_norm},
          {"zero_init_output", c.zero_init_output}, {"table_rms", c.table_rms},
          {"history_pool", c.history_pool == HistoryPool::Mean ? "mean" : "last"}, {"seed", c.seed}};
}

PredictorConfig config_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.d_model = j.at("d_model");
  c.enc_layers = j.at("enc_layers");
  c.dec_layers = j.at("dec_layers");
  c.window = j.at("window");
  c.num_codes = j.at("num_codes");
  c.freq_cap = j.at("freq_cap");
  c.heads = j.at("heads");
  c.ffn_hidden = j.at("ffn_hidden");
  c.rms_norm = j.at("rms_norm");
  c.zero_init_output = j.at("zero_init_output");
  c.table_rms = j.at("table_rms");
  const std::string pool = j.at("history_pool");
  if (pool != "mean" && pool != "last") throw IntegrityError("predictor sidecar: unknown history_pool '" + pool + "'");
  c.history_pool = pool == "mean" ? HistoryPool::Mean : HistoryPool::Last;
  c.seed = j.at("seed");
  return c;
}

}  // namespace

void save(const PredictorModel& model, const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar,
          const std::string& codebook_hash) {
  model.params().save(checkpoint);
  nlohmann::json meta = {{"format", "foresight-predictor"},
                         {"version", 1},
                         {"config", config_json(model.config())},
                         {"codebook_hash", codebook_hash},
                         {"checkpoint_hash", model.params().content_hash()}};
  io::write_text_atomic(sidecar, meta.dump(2) + "\n");
}

PredictorModel load(const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar,
                    const std::optional<std::string>& expected_codebook_hash) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_text(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("predictor sidecar " + sidecar.string() + " is not valid JSON: " + e.what());
  }
  if (meta.value("format", "") != "foresight-predictor") throw IntegrityError("not a predictor sidecar: " + sidecar.string());
  const std::string trained_against = meta.at("codebook_hash");
  if (expected_codebook_hash && *expected_codebook_hash != trained_against) {
    throw IntegrityError("predictor was trained against codebook " + trained_against.substr(0, 12) +
                         "..., current codebook is " + expected_codebook_hash->substr(0, 12) + "...; retrain the predictor");
  }
  auto params = nn::ParamStore::load(checkpoint);
  if (params.content_hash() != meta.at("checkpoint_hash").get<std::string>()) {
    throw IntegrityError("predictor checkpoint does not match its sidecar");
  }
  return PredictorModel(config_from_json(meta.at("config")), std::move(params));
}

}  // namespace foresight::predictor
