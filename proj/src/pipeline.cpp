// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/pipeline.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <numeric>
#include <json.hpp>
#include <set>
#include <sstream>

#include "foresight/error.hpp"
#include "foresight/io.hpp"
#include "foresight/seqstore.hpp"

namespace foresight::pipeline {
namespace {

namespace pt = boost::property_tree;
using quant::Sid;

// Reads one INI section, remembering the effective value of every key so the
// canonical text reflects defaults too.
class Section {
 public:
  Section(const pt::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) tree_ = &*child;
  }

  std::string str(const std::string& key, const std::string& fallback) {
    std::string v = fallback;
    if (tree_ != nullptr) {
      if (auto got = tree_->get_optional<std::string>(key)) v = *got;
    }
    used_.insert(key);
    canonical_ += key + "=" + v + "\n";
    return v;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t min_value) {
    const auto text = str(key, std::to_string(fallback));
    std::int64_t v = 0;
    try {
      v = io::parse_int(text);
    } catch (const Error&) {
      throw ConfigError(where(key) + ": expected an integer, got '" + text + "'");
    }
    if (v < min_value) throw ConfigError(where(key) + ": must be >= " + std::to_string(min_value));
    return v;
  }

  std::size_t count(const std::string& key, std::size_t fallback, std::size_t min_value = 0) {
    return static_cast<std::size_t>(integer(key, static_cast<std::int64_t>(fallback), static_cast<std::int64_t>(min_value)));
  }

  double real(const std::string& key, double fallback) {
    const auto text = str(key, io::format_double(fallback));
    try {
      return io::parse_double(text);
    } catch (const Error&) {
      throw ConfigError(where(key) + ": expected a number, got '" + text + "'");
    }
  }

  bool flag(const std::string& key, bool fallback) {
    const auto text = str(key, fallback ? "true" : "false");
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(where(key) + ": expected true or false, got '" + text + "'");
  }

  std::string choice(const std::string& key, const std::string& fallback, std::initializer_list<const char*> allowed) {
    const auto text = str(key, fallback);
    for (const char* a : allowed) {
      if (text == a) return text;
    }
    throw ConfigError(where(key) + ": unsupported value '" + text + "'");
  }

  void reject_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, _] : *tree_) {
      if (!used_.contains(key)) throw ConfigError("unknown key [" + name_ + "] " + key);
    }
  }

  const std::string& canonical() const { return canonical_; }

 private:
  std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

  std::string name_;
  const pt::ptree* tree_ = nullptr;
  std::set<std::string> used_;
  std::string canonical_;
};

std::string stage_hash(const PipelineConfig& c, const std::string& stage, std::initializer_list<const char*> sections) {
  std::string text = "stage=" + stage + "\nseed=" + std::to_string(c.stage_seed(stage)) + "\n";
  for (const char* s : sections) text += "[" + std::string(s) + "]\n" + c.section_text.at(s);
  return io::sha256_hex(text);
}

class StageRun {
 public:
  StageRun(const PipelineConfig& config, std::string stage, std::string config_hash, std::vector<fs::path> inputs)
      : config_(config), stage_(std::move(stage)), hash_(std::move(config_hash)), inputs_(std::move(inputs)),
        start_(std::chrono::steady_clock::now()) {}

  bool up_to_date() const { return Manifest::load(config_.paths.manifest).up_to_date(stage_, hash_, inputs_); }
  StageResult skipped() const { return {stage_, true, 0.0}; }

  StageResult commit(const std::vector<fs::path>& outputs) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    // Reloaded so records written by other stages since construction survive.
    auto m = Manifest::load(config_.paths.manifest);
    m.record(stage_, hash_, inputs_, outputs, wall);
    m.save();
    return {stage_, false, wall};
  }

 private:
  const PipelineConfig& config_;
  std::string stage_;
  std::string hash_;
  std::vector<fs::path> inputs_;
  std::chrono::steady_clock::time_point start_;
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void require_inputs(const std::vector<fs::path>& inputs, const std::string& stage) {
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw IoError(stage + ": missing input " + p.string() + " (run the upstream stage first)");
  }
}

std::vector<std::vector<synth::SegmentEvent>> load_streams(const PipelineConfig& c) {
  auto flat = c.binary_segments ? synth::read_segments_binary(c.paths.segments) : synth::read_segments(c.paths.segments);
  std::map<std::int64_t, std::vector<synth::SegmentEvent>> by_author;
  for (auto& ev : flat) by_author[ev.author_id].push_back(std::move(ev));
  std::vector<std::vector<synth::SegmentEvent>> out;
  for (auto& [_, stream] : by_author) out.push_back(std::move(stream));
  return out;
}

eval::SidCorpus load_sid_corpus(const PipelineConfig& c) {
  const auto store = seqstore::AuthorStore::replay(c.paths.sid_log);
  eval::SidCorpus out;
  for (auto author : store.authors()) {
    auto seq = *store.sequence(author);
    out.raw[author] = seqstore::decompress(seq);
    out.compressed[author] = std::move(seq);
  }
  return out;
}

predictor::PredictorModel load_predictor_checked(const PipelineConfig& c, const quant::Codebook& codebook) {
  return predictor::load(c.paths.predictor, c.paths.predictor_meta, codebook.content_hash());
}

std::map<std::int64_t, std::uint64_t> stream_lengths(const eval::SidCorpus& sids) {
  std::map<std::int64_t, std::uint64_t> out;
  for (const auto& [a, raw] : sids.raw) out[a] = raw.size();
  return out;
}

ranker::RankerConfig ranker_config(const PipelineConfig& c, const eval::SidCorpus& sids,
                                   std::span<const synth::InteractionRecord> interactions, std::size_t feature_dim) {
  auto rc = c.ranker;
  std::int64_t max_user = -1;
  for (const auto& r : interactions) max_user = std::max(max_user, r.user_id);
  rc.num_users = static_cast<std::size_t>(max_user + 1);
  rc.num_authors = sids.raw.empty() ? 0 : static_cast<std::size_t>(sids.raw.rbegin()->first + 1);
  rc.feature_dim = feature_dim;
  rc.seed = c.stage_seed("train-ranker");
  return rc;
}

std::vector<eval::Arm> selected_arms(const RunOptions& options) {
  if (options.arm) return {eval::arm_by_name(*options.arm)};
  const auto all = eval::standard_arms();
  return {all.begin(), all.end()};
}

std::string arm_file_stem(const std::string& arm) {
  std::string s;
  for (char ch : arm) {
    if (ch == '+') {
      if (!s.empty()) s += '_';
    } else {
      s += ch;
    }
  }
  return s;
}

}  // namespace

fs::path Paths::ranker_checkpoint(const std::string& arm) const { return ranker_dir / ("ranker_" + arm_file_stem(arm) + ".fsnt"); }
fs::path Paths::ranker_meta(const std::string& arm) const { return ranker_dir / ("ranker_" + arm_file_stem(arm) + ".json"); }

std::uint64_t PipelineConfig::stage_seed(const std::string& stage) const { return io::derive_seed(seed, stage); }

PipelineConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  pt::ptree root;
  try {
    pt::ini_parser::read_ini(path.string(), root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  static const std::set<std::string> known = {"global", "paths", "synth", "quantizer", "seqstore", "predictor", "ranker", "eval"};
  for (const auto& [name, _] : root) {
    if (!known.contains(name)) throw ConfigError("unknown config section [" + name + "]");
  }

  PipelineConfig c;
  Section global(root, "global");
  c.seed = static_cast<std::uint64_t>(global.integer("seed", 0, 0));
  if (seed_override) c.seed = *seed_override;

  Section synth_s(root, "synth");
  auto& tp = c.corpus.topics;
  tp.num_topics = synth_s.count("num_topics", tp.num_topics, 2);
  tp.dim = synth_s.count("embedding_dim", tp.dim, 2);
  tp.self_stay = synth_s.real("self_stay", tp.self_stay);
  tp.noise_sigma = synth_s.real("noise_sigma", tp.noise_sigma);
  tp.concentration = synth_s.real("concentration", tp.concentration);
  tp.centroid_scale = synth_s.real("centroid_scale", tp.centroid_scale);
  c.corpus.num_authors = synth_s.count("num_authors", c.corpus.num_authors, 1);
  c.corpus.stream_length = synth_s.count("stream_length", c.corpus.stream_length, 2);
  auto& up = c.corpus.users;
  up.num_users = synth_s.count("num_users", up.num_users, 1);
  up.affinity_scale = synth_s.real("affinity_scale", up.affinity_scale);
  up.affinity_rank = synth_s.count("affinity_rank", up.affinity_rank, 1);
  up.base_rate_jitter = synth_s.real("base_rate_jitter", up.base_rate_jitter);
  c.corpus.interactions.count = synth_s.count("interactions", c.corpus.interactions.count, 1);
  c.corpus.interactions.horizon =
      synth_s.choice("horizon", "next", {"next", "current"}) == "next" ? synth::HorizonRule::NextSegment
                                                                       : synth::HorizonRule::CurrentSegment;
  c.binary_segments = synth_s.choice("embeddings", "text", {"text", "binary"}) == "binary";
  if (!(tp.self_stay >= 0.0 && tp.self_stay < 1.0)) throw ConfigError("[synth] self_stay must lie in [0, 1)");
  if (!(tp.noise_sigma >= 0.0)) throw ConfigError("[synth] noise_sigma must be >= 0");
  if (!(tp.concentration > 0.0)) throw ConfigError("[synth] concentration must be > 0");

  Section quant_s(root, "quantizer");
  c.kmeans.num_codes = quant_s.count("num_codes", 16, 2);
  c.kmeans.max_iters = quant_s.count("max_iters", c.kmeans.max_iters, 1);
  c.kmeans.tol = quant_s.real("tol", c.kmeans.tol);
  if (!(c.kmeans.tol >= 0.0)) throw ConfigError("[quantizer] tol must be >= 0");

  Section store_s(root, "seqstore");
  c.l_max = store_s.count("l_max", c.l_max, 1);
  c.freq_cap = store_s.count("freq_cap", c.freq_cap, 1);

  Section pred_s(root, "predictor");
  auto& pc = c.predictor;
  pc.d_model = pred_s.count("d_model", pc.d_model, 2);
  pc.enc_layers = pred_s.count("enc_layers", pc.enc_layers);
  pc.dec_layers = pred_s.count("dec_layers", pc.dec_layers);
  pc.heads = pred_s.count("heads", pc.heads, 1);
  pc.ffn_hidden = pred_s.count("ffn_hidden", pc.ffn_hidden, 1);
  pc.rms_norm = pred_s.flag("rms_norm", pc.rms_norm);
  pc.history_pool = pred_s.choice("history_pool", "mean", {"mean", "last"}) == "mean" ? predictor::HistoryPool::Mean
                                                                                      : predictor::HistoryPool::Last;
  pc.table_rms = pred_s.real("table_rms", pc.table_rms);
  c.predictor_train.adam.lr = pred_s.real("lr", 3e-3);
  c.predictor_train.steps = pred_s.count("steps", c.predictor_train.steps, 1);
  c.predictor_train.batch = pred_s.count("batch", c.predictor_train.batch, 1);
  pc.window = c.l_max;
  pc.freq_cap = c.freq_cap;
  pc.num_codes = c.kmeans.num_codes;
  pc.validate();

  Section rank_s(root, "ranker");
  auto& rc = c.ranker;
  rc.num_experts = rank_s.count("experts", rc.num_experts, 1);
  rc.id_dim = rank_s.count("id_dim", rc.id_dim, 1);
  rc.expert_hidden = rank_s.count("expert_hidden", rc.expert_hidden, 1);
  rc.expert_out = rank_s.count("expert_out", rc.expert_out, 1);
  rc.tower_hidden = rank_s.count("tower_hidden", rc.tower_hidden, 1);
  c.ranker_train.adam.lr = rank_s.real("lr", c.ranker_train.adam.lr);
  c.ranker_train.epochs = rank_s.count("epochs", c.ranker_train.epochs, 1);
  c.ranker_train.batch = rank_s.count("batch", c.ranker_train.batch, 1);

  Section eval_s(root, "eval");
  c.split.train = eval_s.real("train", c.split.train);
  c.split.valid = eval_s.real("valid", c.split.valid);
  c.split.test = eval_s.real("test", c.split.test);
  c.l_raw = eval_s.count("l_raw", 0);
  c.split.validate();

  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto resolve = [&](const fs::path& p) { return (p.is_absolute() ? p : base / p).lexically_normal(); };
  Section paths_s(root, "paths");
  auto& P = c.paths;
  P.out_dir = resolve(paths_s.str("out_dir", "out"));
  auto in_out = [&](const char* key, const std::string& fallback) {
    const fs::path p = paths_s.str(key, fallback);
    return (p.is_absolute() ? p : P.out_dir / p).lexically_normal();
  };
  P.segments = in_out("segments", c.binary_segments ? "corpus/segments.bin" : "corpus/segments.txt");
  P.interactions = in_out("interactions", "corpus/interactions.txt");
  P.ground_truth = in_out("ground_truth", "corpus/ground_truth.txt");
  P.topic_model = in_out("topic_model", "corpus/topic_model.txt");
  P.codebook = in_out("codebook", "codebook.fscb");
  P.sid_log = in_out("sid_log", "sids.log");
  P.store_snapshot = in_out("store_snapshot", "store.fsst");
  P.predictor = in_out("predictor", "predictor.fsnt");
  P.predictor_meta = in_out("predictor_meta", "predictor.json");
  P.ranker_dir = in_out("ranker_dir", "rankers");
  P.report_text = in_out("report_text", "report.txt");
  P.report_tsv = in_out("report_tsv", "report.tsv");
  P.manifest = in_out("manifest", "manifest.json");

  std::set<fs::path> seen;
  std::vector<fs::path> all = {P.segments, P.interactions, P.ground_truth, P.topic_model, P.codebook,
                               P.sid_log,  P.store_snapshot, P.predictor, P.predictor_meta, P.report_text,
                               P.report_tsv, P.manifest};
  for (const auto& arm : eval::standard_arms()) {
    all.push_back(P.ranker_checkpoint(arm.name));
    all.push_back(P.ranker_meta(arm.name));
  }
  for (const auto& p : all) {
    if (!seen.insert(p).second) throw ConfigError("[paths] two outputs resolve to " + p.string());
  }

  for (Section* s : {&global, &synth_s, &quant_s, &store_s, &pred_s, &rank_s, &eval_s, &paths_s}) s->reject_unknown();
  c.section_text = {{"synth", synth_s.canonical()},   {"quantizer", quant_s.canonical()},
                    {"seqstore", store_s.canonical()}, {"predictor", pred_s.canonical()},
                    {"ranker", rank_s.canonical()},   {"eval", eval_s.canonical()}};
  return c;
}

// ---- Manifest ---------------------------------------------------------------

Manifest Manifest::load(const fs::path& path) {
  Manifest m;
  m.path_ = path;
  if (!fs::exists(path)) return m;
  try {
    const auto j = nlohmann::json::parse(io::read_text(path));
    for (const auto& [name, s] : j.at("stages").items()) {
      Stage st;
      st.config_hash = s.at("config_hash");
      st.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
      st.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      st.wall_seconds = s.at("wall_seconds");
      m.stages_[name] = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("manifest " + path.string() + " is unreadable: " + e.what());
  }
  return m;
}

void Manifest::save() const {
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& [name, s] : stages_) {
    stages[name] = {{"config_hash", s.config_hash},
                    {"inputs", s.inputs},
                    {"outputs", s.outputs},
                    {"wall_seconds", s.wall_seconds}};
  }
  ensure_parent(path_);
  io::write_text_atomic(path_, nlohmann::json{{"version", 1}, {"stages", stages}}.dump(2) + "\n");
}

std::string Manifest::key(const fs::path& p) const {
  const auto r = p.lexically_normal().lexically_relative(path_.parent_path().lexically_normal());
  return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
}

fs::path Manifest::resolve(const std::string& key) const {
  const fs::path p(key);
  return p.is_absolute() ? p : path_.parent_path() / p;
}

const Manifest::Stage* Manifest::find(const std::string& stage) const {
  auto it = stages_.find(stage);
  return it == stages_.end() ? nullptr : &it->second;
}

void Manifest::record(const std::string& stage, const std::string& config_hash, const std::vector<fs::path>& inputs,
                      const std::vector<fs::path>& outputs, double wall_seconds) {
  Stage s;
  s.config_hash = config_hash;
  for (const auto& p : inputs) s.inputs[key(p)] = io::sha256_file(p);
  for (const auto& p : outputs) s.outputs[key(p)] = io::sha256_file(p);
  s.wall_seconds = wall_seconds;
  stages_[stage] = std::move(s);
}

bool Manifest::up_to_date(const std::string& stage, const std::string& config_hash,
                          const std::vector<fs::path>& inputs) const {
  const Stage* s = find(stage);
  if (s == nullptr || s->config_hash != config_hash || s->inputs.size() != inputs.size()) return false;
  for (const auto& p : inputs) {
    auto it = s->inputs.find(key(p));
    if (it == s->inputs.end() || !fs::exists(p) || io::sha256_file(p) != it->second) return false;
  }
  for (const auto& [k, hash] : s->outputs) {
    const auto p = resolve(k);
    if (!fs::exists(p) || io::sha256_file(p) != hash) return false;
  }
  return true;
}

std::optional<std::string> Manifest::output_hash(const std::string& stage, const fs::path& output) const {
  const Stage* s = find(stage);
  if (s == nullptr) return std::nullopt;
  auto it = s->outputs.find(key(output));
  if (it == s->outputs.end()) return std::nullopt;
  return it->second;
}


// ---- Stages -----------------------------------------------------------------

quant::Codebook load_codebook_checked(const PipelineConfig& config) {
  const auto& path = config.paths.codebook;
  if (!fs::exists(path)) throw IoError("codebook " + path.string() + " not found (run train-quantizer)");
  const auto recorded = Manifest::load(config.paths.manifest).output_hash("train-quantizer", path);
  if (!recorded) throw IntegrityError("no manifest record for " + path.string() + "; rerun train-quantizer");
  const auto actual = io::sha256_file(path);
  if (actual != *recorded) {
    throw IntegrityError("codebook " + path.string() + " has hash " + actual + " but train-quantizer recorded " +
                         *recorded + "; refusing to load a modified codebook");
  }
  return quant::Codebook::load(path);
}

StageResult cmd_gen(const PipelineConfig& c, const RunOptions& options) {
  const auto& P = c.paths;
  StageRun run(c, "gen", stage_hash(c, "gen", {"synth"}), {});
  const std::vector<fs::path> outputs = {P.segments, P.interactions, P.ground_truth, P.topic_model};
  if (!options.force) {
    if (run.up_to_date()) return run.skipped();
    for (const auto& p : outputs) {
      if (fs::exists(p)) throw ConfigError("gen: " + p.string() + " already exists; pass --force to overwrite");
    }
  }
  const auto corpus = synth::gen_corpus(c.corpus, c.stage_seed("gen"));
  for (const auto& p : outputs) ensure_parent(p);
  if (c.binary_segments) {
    synth::write_segments_binary(P.segments, corpus.streams);
  } else {
    synth::write_segments(P.segments, corpus.streams);
  }
  synth::write_interactions(P.interactions, corpus.interactions);
  synth::write_ground_truth(P.ground_truth, corpus.streams);
  synth::write_topic_model(P.topic_model, corpus.topic_model);
  return run.commit(outputs);
}

StageResult cmd_train_quantizer(const PipelineConfig& c, const RunOptions& options) {
  const auto& P = c.paths;
  const std::vector<fs::path> inputs = {P.segments};
  StageRun run(c, "train-quantizer", stage_hash(c, "train-quantizer", {"quantizer", "eval"}), inputs);
  if (!options.force && run.up_to_date()) return run.skipped();
  require_inputs(inputs, "train-quantizer");
  auto km = c.kmeans;
  km.seed = c.stage_seed("train-quantizer");
  const auto codebook = eval::fit_codebook(load_streams(c), c.split, km);
  ensure_parent(P.codebook);
  codebook.save(P.codebook);
  return run.commit({P.codebook});
}

StageResult cmd_quantize(const PipelineConfig& c, const RunOptions& options) {
  const auto& P = c.paths;
  const std::vector<fs::path> inputs = {P.segments, P.codebook};
  StageRun run(c, "quantize", stage_hash(c, "quantize", {}), inputs);
  if (!options.force && run.up_to_date()) return run.skipped();
  require_inputs(inputs, "quantize");
  const auto codebook = load_codebook_checked(c);
  const auto streams = load_streams(c);
  ensure_parent(P.sid_log);
  ensure_parent(P.store_snapshot);
  {
    seqstore::FileAppendLog log(P.sid_log, true);
    seqstore::AuthorStore store(&log);
    for (const auto& stream : streams) {
      for (const auto& q : quant::quantize_stream(stream, codebook)) store.append(q.author_id, q.seq_index, q.sid);
    }
    io::write_file_atomic(P.store_snapshot, store.snapshot());
  }
  return run.commit({P.sid_log, P.store_snapshot});
}

StageResult cmd_train_predictor(const PipelineConfig& c, const RunOptions& options) {
  const auto& P = c.paths;
  const std::vector<fs::path> inputs = {P.sid_log, P.codebook};
  StageRun run(c, "train-predictor", stage_hash(c, "train-predictor", {"seqstore", "predictor", "eval"}), inputs);
  if (!options.force && run.up_to_date()) return run.skipped();
  require_inputs(inputs, "train-predictor");
  const auto codebook = load_codebook_checked(c);
  const auto sids = load_sid_corpus(c);
  auto pc = c.predictor;
  if (pc.num_codes != codebook.size()) throw ConfigError("train-predictor: codebook size differs from [quantizer] num_codes");
  pc.seed = c.stage_seed("train-predictor");
  const auto examples = eval::training_examples(sids, pc.window, pc.pad_code(), c.split);
  predictor::PredictorModel model(pc, &codebook);
  auto opts = c.predictor_train;
  opts.seed = io::derive_seed(pc.seed, "order");
  predictor::train(model, examples, opts);
  ensure_parent(P.predictor);
  ensure_parent(P.predictor_meta);
  predictor::save(model, P.predictor, P.predictor_meta, codebook.content_hash());
  return run.commit({P.predictor, P.predictor_meta});
}

std::vector<StageResult> cmd_train_ranker(const PipelineConfig& c, const RunOptions& options) {
  const auto& P = c.paths;
  const std::vector<fs::path> inputs = {P.interactions, P.sid_log, P.codebook, P.predictor, P.predictor_meta};
  std::vector<StageResult> results;
  std::vector<std::pair<eval::Arm, StageRun>> pending;
  for (const auto& arm : selected_arms(options)) {
    const std::string stage = "train-ranker/" + arm.name;
    StageRun run(c, stage, stage_hash(c, stage, {"ranker", "eval", "seqstore"}), inputs);
    if (!options.force && run.up_to_date()) {
      results.push_back(run.skipped());
    } else {
      pending.emplace_back(arm, std::move(run));
    }
  }
  if (pending.empty()) return results;

  require_inputs(inputs, "train-ranker");
  const auto codebook = load_codebook_checked(c);
  const auto model = load_predictor_checked(c, codebook);
  const auto sids = load_sid_corpus(c);
  const auto interactions = synth::read_interactions(P.interactions);
  const auto split = eval::split_interactions(interactions, stream_lengths(sids), c.split);
  // Features are only needed for the training rows; others stay empty.
  std::vector<synth::InteractionRecord> train_rows;
  for (std::size_t i : split.train) train_rows.push_back(interactions[i]);
  const auto train_features = eval::interaction_features(model, sids, train_rows);
  eval::InteractionSplit train_only;
  train_only.train.resize(train_rows.size());
  std::iota(train_only.train.begin(), train_only.train.end(), 0);

  const auto rc = ranker_config(c, sids, interactions, model.config().d_model);
  auto opts = c.ranker_train;
  opts.seed = io::derive_seed(rc.seed, "order");
  fs::create_directories(P.ranker_dir);
  std::vector<std::string> failed;
  for (auto& [arm, run] : pending) {
    auto cfg = rc;
    cfg.flags = arm.flags;
    const auto samples = eval::build_samples(train_rows, train_features, train_only.train, arm.flags);
    ranker::RankerModel ranker_model(cfg);
    try {
      ranker::train(ranker_model, samples, opts);
    } catch (const NumericError& e) {
      fs::remove(P.ranker_checkpoint(arm.name));
      io::write_text_atomic(P.ranker_meta(arm.name),
                            nlohmann::json{{"format", "foresight-ranker"}, {"status", "failed"}, {"error", e.what()}}
                                    .dump(2) + "\n");
      failed.push_back(arm.name + ": " + e.what());
      continue;
    }
    ranker::save(ranker_model, P.ranker_checkpoint(arm.name), P.ranker_meta(arm.name));
    results.push_back(run.commit({P.ranker_checkpoint(arm.name), P.ranker_meta(arm.name)}));
  }
  if (!failed.empty()) {
    std::string msg = "ranker training diverged for";
    for (const auto& f : failed) msg += "\n  " + f;
    throw NumericError(msg);
  }
  return results;
}

StageResult cmd_evaluate(const PipelineConfig& c, const RunOptions& options) {
  const auto& P = c.paths;
  const auto arms = selected_arms(options);
  std::vector<fs::path> inputs = {P.interactions, P.sid_log,      P.codebook,   P.predictor,
                                  P.predictor_meta, P.ground_truth, P.topic_model};
  for (const auto& arm : arms) {
    if (fs::exists(P.ranker_checkpoint(arm.name))) inputs.push_back(P.ranker_checkpoint(arm.name));
    inputs.push_back(P.ranker_meta(arm.name));
  }
  std::string stage = "evaluate";
  if (options.arm) stage += "/" + *options.arm;
  StageRun run(c, stage, stage_hash(c, stage, {"eval", "seqstore", "ranker"}), inputs);
  if (!options.force && run.up_to_date()) return run.skipped();
  require_inputs(inputs, stage);

  const auto codebook = load_codebook_checked(c);
  const auto model = load_predictor_checked(c, codebook);
  const auto sids = load_sid_corpus(c);
  const auto interactions = synth::read_interactions(P.interactions);
  const auto split = eval::split_interactions(interactions, stream_lengths(sids), c.split);

  eval::EvalReport report;
  report.seed = c.seed;
  {
    std::string all;
    for (const auto& [name, text] : c.section_text) all += "[" + name + "]\n" + text;
    report.config_hash = io::sha256_hex(all).substr(0, 16);
  }
  report.train_interactions = split.train.size();
  report.test_interactions = split.test.size();

  std::vector<synth::InteractionRecord> test_rows;
  for (std::size_t i : split.test) test_rows.push_back(interactions[i]);
  const auto test_features = eval::interaction_features(model, sids, test_rows);
  std::vector<std::size_t> all_test(test_rows.size());
  std::iota(all_test.begin(), all_test.end(), 0);
  for (const auto& arm : arms) {
    const auto meta = nlohmann::json::parse(io::read_text(P.ranker_meta(arm.name)));
    if (meta.value("status", "ok") == "failed") {
      eval::ArmResult r;
      r.name = arm.name;
      r.error = meta.value("error", "training diverged");
      report.arms.push_back(r);
      continue;
    }
    const auto ranker_model = ranker::load(P.ranker_checkpoint(arm.name), P.ranker_meta(arm.name));
    if (!(ranker_model.config().flags == arm.flags))
      throw IntegrityError("ranker checkpoint for arm " + arm.name + " has different feature flags");
    const auto samples = eval::build_samples(test_rows, test_features, all_test, arm.flags);
    report.arms.push_back(eval::evaluate_arm(ranker_model, arm.name, samples));
  }

  // Next-Sid strategies on held-out windows, with the oracle from ground truth.
  const auto truth_rows = synth::read_ground_truth(P.ground_truth);
  const auto topic_model = synth::read_topic_model(P.topic_model);
  std::map<std::int64_t, std::vector<std::int32_t>> topics;
  for (const auto& g : truth_rows) {
    auto& t = topics[g.author_id];
    if (g.seq_index != t.size()) throw IntegrityError("ground truth rows out of order");
    t.push_back(g.true_topic);
  }
  std::vector<std::int32_t> train_topics;
  std::vector<Sid> train_sids;
  std::vector<eval::EvalWindow> windows;
  const auto& pc = model.config();
  for (const auto& [author, seq] : sids.compressed) {
    const auto it = topics.find(author);
    if (it == topics.end()) throw IntegrityError("ground truth has no rows for author " + std::to_string(author));
    const auto sp = eval::split_points(seq.total_len, c.split);
    const auto& raw = sids.raw.at(author);
    train_topics.insert(train_topics.end(), it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(sp.train_end));
    train_sids.insert(train_sids.end(), raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(sp.train_end));
    auto w = eval::eval_windows(seq, it->second, pc.window, pc.pad_code(), sp.test_begin, seq.total_len);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  eval::OracleInputs oracle{&topic_model,
                            eval::majority_sid_per_topic(train_topics, train_sids, topic_model.num_topics, codebook.size())};
  report.eval_windows = windows.size();
  report.strategies = eval::evaluate_strategies(model, windows, c.l_raw == 0 ? pc.window : c.l_raw, &oracle);

  ensure_parent(P.report_text);
  ensure_parent(P.report_tsv);
  io::write_text_atomic(P.report_text, eval::format_text(report));
  io::write_text_atomic(P.report_tsv, eval::format_tsv(report));
  return run.commit({P.report_text, P.report_tsv});
}

std::string cmd_report(const PipelineConfig& config) {
  if (!fs::exists(config.paths.report_text))
    throw IoError("no report at " + config.paths.report_text.string() + " (run evaluate)");
  return io::read_text(config.paths.report_text);
}

std::vector<StageResult> run_all(const PipelineConfig& config, const RunOptions& options) {
  std::vector<StageResult> out;
  out.push_back(cmd_gen(config, options));
  out.push_back(cmd_train_quantizer(config, options));
  out.push_back(cmd_quantize(config, options));
  out.push_back(cmd_train_predictor(config, options));
  for (auto& r : cmd_train_ranker(config, options)) out.push_back(r);
  out.push_back(cmd_evaluate(config, options));
  return out;
}

}  // namespace foresight::pipeline
