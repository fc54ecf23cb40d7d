// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "foresight/error.hpp"
#include "foresight/io.hpp"

namespace foresight::synth {

namespace {

std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

// Iterates non-comment, non-empty lines as whitespace-split fields.
template <typename F>
void for_each_record(const std::filesystem::path& path, F&& f) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = io::split_ws(line);
    try {
      f(fields);
    } catch (const IntegrityError& e) {
      throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void expect_fields(std::span<const std::string_view> fields, std::size_t n) {
  if (fields.size() != n) {
    throw IntegrityError("expected " + std::to_string(n) + " fields, got " + std::to_string(fields.size()));
  }
}

}  // namespace

TopicModel gen_topic_model(const TopicModelParams& params, std::uint64_t seed) {
  if (params.num_topics < 2) throw InvalidArgument("gen_topic_model: num_topics must be >= 2");
  if (params.dim < 2) throw InvalidArgument("gen_topic_model: embedding dim must be >= 2");
  if (!(params.self_stay >= 0.0 && params.self_stay < 1.0)) {
    throw InvalidArgument("gen_topic_model: self_stay must be in [0, 1); a value of 1 freezes the chain");
  }
  if (!(params.noise_sigma >= 0.0)) throw InvalidArgument("gen_topic_model: noise_sigma must be >= 0");
  if (!(params.concentration > 0.0)) throw InvalidArgument("gen_topic_model: concentration must be > 0");

  std::mt19937_64 rng(seed);
  TopicModel m;
  m.num_topics = params.num_topics;
  m.dim = params.dim;
  m.self_stay = params.self_stay;
  m.noise_sigma = params.noise_sigma;

  std::normal_distribution<double> normal(0.0, params.centroid_scale);
  m.centroids.resize(m.num_topics * m.dim);
  for (auto& c : m.centroids) c = normal(rng);

  const std::size_t k = m.num_topics;
  std::gamma_distribution<double> gamma(params.concentration, 1.0);
  m.transition.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> g(k);
    double total = 0.0;
    // Guard against an all-underflow draw at tiny concentrations.
    while (!(total > 0.0)) {
      total = 0.0;
      for (auto& x : g) {
        x = gamma(rng);
        total += x;
      }
    }
    for (std::size_t j = 0; j < k; ++j) {
      m.transition[i * k + j] = (1.0 - params.self_stay) * g[j] / total;
    }
    m.transition[i * k + i] += params.self_stay;
    // Absorb rounding so the row sums to 1 as exactly as doubles allow.
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += m.transition[i * k + j];
    m.transition[i * k + i] += 1.0 - row;
  }
  validate(m);
  return m;
}

void validate(const TopicModel& m) {
  if (m.num_topics < 1 || m.dim < 1) throw InvalidArgument("topic model: empty");
  if (m.centroids.size() != m.num_topics * m.dim || m.transition.size() != m.num_topics * m.num_topics) {
    throw InvalidArgument("topic model: array sizes disagree with num_topics/dim");
  }
  if (!(m.noise_sigma >= 0.0)) throw InvalidArgument("topic model: noise_sigma must be >= 0");
  for (std::size_t i = 0; i < m.num_topics; ++i) {
    double row = 0.0;
    for (double p : m.transition_row(i)) {
      if (!(p >= 0.0)) throw InvalidArgument("topic model: negative transition probability");
      row += p;
    }
    if (std::abs(row - 1.0) > 1e-9) {
      throw InvalidArgument("topic model: transition row " + std::to_string(i) + " sums to " + io::format_double(row));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (std::equal(m.centroid(i).begin(), m.centroid(i).end(), m.centroid(j).begin())) {
        throw InvalidArgument("topic model: centroids " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
      }
    }
  }
}

std::vector<SegmentEvent> gen_author_stream(const TopicModel& model, std::int64_t author_id, std::size_t length,
                                            std::uint64_t seed) {
  if (length < 1) throw InvalidArgument("gen_author_stream: length must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<SegmentEvent> out;
  out.reserve(length);
  auto topic = std::uniform_int_distribution<std::size_t>(0, model.num_topics - 1)(rng);
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) topic = sample_categorical(model.transition_row(topic), rng);
    SegmentEvent ev;
    ev.author_id = author_id;
    ev.seq_index = static_cast<std::uint32_t>(t);
    ev.true_topic = static_cast<std::int32_t>(topic);
    const auto c = model.centroid(topic);
    ev.embedding.assign(c.begin(), c.end());
    if (model.noise_sigma > 0.0) {
      for (auto& x : ev.embedding) x += model.noise_sigma * noise(rng);
    }
    out.push_back(std::move(ev));
  }
  return out;
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::Ctr: return "ctr";
    case Task::Wtr: return "wtr";
    case Task::Lvtr: return "lvtr";
    case Task::Gtr: return "gtr";
  }
  return "?";
}

std::vector<UserModel> gen_users(const TopicModel& model, const UserParams& params, std::uint64_t seed) {
  if (params.affinity_rank < 1) throw InvalidArgument("gen_users: affinity_rank must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t r = params.affinity_rank;
  std::vector<double> topic_factors(model.num_topics * r);
  for (auto& y : topic_factors) y = normal(rng);
  const double norm = params.affinity_scale / std::sqrt(static_cast<double>(r));

  std::vector<UserModel> users(params.num_users);
  std::vector<double> z(r);
  for (std::size_t u = 0; u < users.size(); ++u) {
    auto& user = users[u];
    user.user_id = static_cast<std::int64_t>(u);
    for (auto& v : z) v = normal(rng);
    user.affinity.resize(model.num_topics);
    for (std::size_t k = 0; k < model.num_topics; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < r; ++i) s += z[i] * topic_factors[k * r + i];
      user.affinity[k] = norm * s;
    }
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      user.base_rate[t] = params.base_rate[t] + params.base_rate_jitter * normal(rng);
    }
  }
  return users;
}

double label_probability(const UserModel& user, std::size_t topic, Task task, const TaskArray& task_weight) {
  const auto t = static_cast<std::size_t>(task);
  return sigmoid(user.base_rate[t] + user.affinity.at(topic) * task_weight[t]);
}

InteractionRecord draw_interaction(const UserModel& user, std::span<const SegmentEvent> stream,
                                   std::uint32_t at_seq_index, const InteractionParams& params,
                                   std::mt19937_64& rng) {
  const std::size_t horizon = at_seq_index + (params.horizon == HorizonRule::NextSegment ? 1u : 0u);
  if (at_seq_index >= stream.size()) throw InvalidArgument("draw_interaction: at_seq_index beyond stream");
  if (horizon >= stream.size()) {
    throw InvalidArgument("draw_interaction: no next segment after index " + std::to_string(at_seq_index));
  }
  const auto topic = stream[horizon].true_topic;
  if (topic < 0) throw InvalidArgument("draw_interaction: stream lacks ground-truth topics");
  InteractionRecord rec;
  rec.user_id = user.user_id;
  rec.author_id = stream[at_seq_index].author_id;
  rec.at_seq_index = at_seq_index;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto task : kTasks) {
    const double p = label_probability(user, static_cast<std::size_t>(topic), task, params.task_weight);
    rec.labels[static_cast<std::size_t>(task)] = unif(rng) < p ? 1 : 0;
  }
  return rec;
}

std::vector<InteractionRecord> gen_interactions(std::span<const UserModel> users,
                                                std::span<const std::vector<SegmentEvent>> streams,
                                                const InteractionParams& params, std::uint64_t seed) {
  if (users.empty() || streams.empty()) throw InvalidArgument("gen_interactions: need users and streams");
  for (const auto& s : streams) {
    if (s.size() < 2) throw InvalidArgument("gen_interactions: every stream needs at least two segments");
  }
  std::mt19937_64 rng(seed);
  std::vector<InteractionRecord> out;
  out.reserve(params.count);
  for (std::size_t i = 0; i < params.count; ++i) {
    const auto& user = users[std::uniform_int_distribution<std::size_t>(0, users.size() - 1)(rng)];
    const auto& stream = streams[std::uniform_int_distribution<std::size_t>(0, streams.size() - 1)(rng)];
    const auto at = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, stream.size() - 2)(rng));
    out.push_back(draw_interaction(user, stream, at, params, rng));
  }
  return out;
}

Corpus gen_corpus(const CorpusConfig& config, std::uint64_t seed) {
  Corpus c;
  c.topic_model = gen_topic_model(config.topics, io::derive_seed(seed, "topics"));
  c.streams.reserve(config.num_authors);
  for (std::size_t a = 0; a < config.num_authors; ++a) {
    c.streams.push_back(gen_author_stream(c.topic_model, static_cast<std::int64_t>(a), config.stream_length,
                                          io::derive_seed(seed, "author:" + std::to_string(a))));
  }
  c.users = gen_users(c.topic_model, config.users, io::derive_seed(seed, "users"));
  c.interactions = gen_interactions(c.users, c.streams, config.interactions, io::derive_seed(seed, "interactions"));
  return c;
}

void write_segments(const std::filesystem::path& path, std::span<const std::vector<SegmentEvent>> streams) {
  auto out = open_out(path);
  out << "# segments v1: author_id seq_index embedding...\n";
  std::string line;
  for (const auto& stream : streams) {
    for (const auto& ev : stream) {
      line = std::to_string(ev.author_id) + ' ' + std::to_string(ev.seq_index);
      for (double x : ev.embedding) {
        line += ' ';
        line += io::format_double(x);
      }
      line += '\n';
      out << line;
    }
  }
  finish(out, path);
}

std::vector<SegmentEvent> read_segments(const std::filesystem::path& path) {
  std::vector<SegmentEvent> out;
  std::size_t dim = 0;
  for_each_record(path, [&](std::span<const std::string_view> f) {
    if (f.size() < 3) throw IntegrityError("segment record needs author, index and embedding");
    if (dim == 0) dim = f.size() - 2;
    expect_fields(f, dim + 2);
    SegmentEvent ev;
    ev.author_id = io::parse_int(f[0]);
    ev.seq_index = static_cast<std::uint32_t>(io::parse_int(f[1]));
    ev.embedding.reserve(dim);
    for (std::size_t i = 2; i < f.size(); ++i) ev.embedding.push_back(io::parse_double(f[i]));
    out.push_back(std::move(ev));
  });
  return out;
}

void write_segments_binary(const std::filesystem::path& path, std::span<const std::vector<SegmentEvent>> streams) {
  io::ByteWriter w;
  std::size_t dim = 0, count = 0;
  for (const auto& s : streams) {
    for (const auto& ev : s) {
      dim = ev.embedding.size();
      ++count;
    }
  }
  w.u32(0x47535346);  // "FSSG"
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(dim));
  w.u64(count);
  for (const auto& s : streams) {
    for (const auto& ev : s) {
      if (ev.embedding.size() != dim) throw InvalidArgument("write_segments_binary: mixed embedding dims");
      w.i64(ev.author_id);
      w.u32(ev.seq_index);
      for (double x : ev.embedding) w.f64(x);
    }
  }
  io::write_file_atomic(path, w.buffer());
}

std::vector<SegmentEvent> read_segments_binary(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  if (r.u32() != 0x47535346) throw IntegrityError(path.string() + ": not a binary segments file");
  if (r.u32() != 1) throw IntegrityError(path.string() + ": unsupported version");
  const auto dim = r.u32();
  const auto count = r.u64();
  std::vector<SegmentEvent> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SegmentEvent ev;
    ev.author_id = r.i64();
    ev.seq_index = r.u32();
    ev.embedding.resize(dim);
    for (auto& x : ev.embedding) x = r.f64();
    out.push_back(std::move(ev));
  }
  if (r.remaining() != 0) throw IntegrityError(path.string() + ": trailing bytes");
  return out;
}

void write_interactions(const std::filesystem::path& path, std::span<const InteractionRecord> records) {
  auto out = open_out(path);
  out << "# interactions v1: user_id author_id at_seq_index ctr wtr lvtr gtr\n";
  for (const auto& r : records) {
    out << r.user_id << ' ' << r.author_id << ' ' << r.at_seq_index;
    for (auto l : r.labels) out << ' ' << static_cast<int>(l);
    out << '\n';
  }
  finish(out, path);
}

std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path) {
  std::vector<InteractionRecord> out;
  for_each_record(path, [&](std::span<const std::string_view> f) {
    expect_fields(f, 3 + kNumTasks);
    InteractionRecord r;
    r.user_id = io::parse_int(f[0]);
    r.author_id = io::parse_int(f[1]);
    r.at_seq_index = static_cast<std::uint32_t>(io::parse_int(f[2]));
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      const auto v = io::parse_int(f[3 + t]);
      if (v != 0 && v != 1) throw IntegrityError("label must be 0 or 1");
      r.labels[t] = static_cast<std::uint8_t>(v);
    }
    out.push_back(r);
  });
  return out;
}

void write_ground_truth(const std::filesystem::path& path, std::span<const std::vector<SegmentEvent>> streams) {
  auto out = open_out(path);
  out << "# ground truth v1: author_id seq_index true_topic\n";
  for (const auto& s : streams) {
    for (const auto& ev : s) out << ev.author_id << ' ' << ev.seq_index << ' ' << ev.true_topic << '\n';
  }
  finish(out, path);
}

std::vector<GroundTruthRow> read_ground_truth(const std::filesystem::path& path) {
  std::vector<GroundTruthRow> out;
  for_each_record(path, [&](std::span<const std::string_view> f) {
    expect_fields(f, 3);
    out.push_back({io::parse_int(f[0]), static_cast<std::uint32_t>(io::parse_int(f[1])),
                   static_cast<std::int32_t>(io::parse_int(f[2]))});
  });
  return out;
}

void write_topic_model(const std::filesystem::path& path, const TopicModel& m) {
  auto out = open_out(path);
  out << "# topic model v1: header, centroid rows, transition rows\n";
  out << m.num_topics << ' ' << m.dim << ' ' << io::format_double(m.self_stay) << ' '
      << io::format_double(m.noise_sigma) << '\n';
  auto write_rows = [&](const std::vector<double>& data, std::size_t cols) {
    for (std::size_t i = 0; i < data.size(); i += cols) {
      for (std::size_t j = 0; j < cols; ++j) out << (j ? " " : "") << io::format_double(data[i + j]);
      out << '\n';
    }
  };
  write_rows(m.centroids, m.dim);
  write_rows(m.transition, m.num_topics);
  finish(out, path);
}

TopicModel read_topic_model(const std::filesystem::path& path) {
  TopicModel m;
  std::size_t line = 0;
  for_each_record(path, [&](std::span<const std::string_view> f) {
    if (line == 0) {
      expect_fields(f, 4);
      m.num_topics = static_cast<std::size_t>(io::parse_int(f[0]));
      m.dim = static_cast<std::size_t>(io::parse_int(f[1]));
      m.self_stay = io::parse_double(f[2]);
      m.noise_sigma = io::parse_double(f[3]);
    } else if (line <= m.num_topics) {
      expect_fields(f, m.dim);
      for (auto s : f) m.centroids.push_back(io::parse_double(s));
    } else if (line <= 2 * m.num_topics) {
      expect_fields(f, m.num_topics);
      for (auto s : f) m.transition.push_back(io::parse_double(s));
    } else {
      throw IntegrityError("unexpected trailing record");
    }
    ++line;
  });
  try {
    validate(m);
  } catch (const InvalidArgument& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace foresight::synth
