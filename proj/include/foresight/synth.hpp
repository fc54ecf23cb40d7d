// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace foresight::synth {

// Hidden content dynamics: topics with embedding centroids and a Markov
// transition matrix whose diagonal carries at least `self_stay` mass.
struct TopicModel {
  std::size_t num_topics = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;   // num_topics x dim
  std::vector<double> transition;  // num_topics x num_topics, row-stochastic
  double self_stay = 0.0;
  double noise_sigma = 0.0;

  std::span<const double> centroid(std::size_t topic) const {
    return {centroids.data() + topic * dim, dim};
  }
  std::span<const double> transition_row(std::size_t topic) const {
    return {transition.data() + topic * num_topics, num_topics};
  }
  double p(std::size_t from, std::size_t to) const { return transition[from * num_topics + to]; }
};

struct TopicModelParams {
  std::size_t num_topics = 16;
  std::size_t dim = 16;
  double self_stay = 0.5;
  double noise_sigma = 0.3;
  // Dirichlet concentration of the non-sticky part of each transition row.
  // Small values give peaked rows (predictable successors).
  double concentration = 0.3;
  double centroid_scale = 1.0;
};

TopicModel gen_topic_model(const TopicModelParams& params, std::uint64_t seed);

// Throws InvalidArgument if a row is not stochastic within 1e-9, centroids
// coincide, or noise_sigma is negative.
void validate(const TopicModel& model);

struct SegmentEvent {
  std::int64_t author_id = 0;
  std::uint32_t seq_index = 0;
  std::vector<double> embedding;
  std::int32_t true_topic = -1;  // -1 when read back from a segments file
};

// Markov topic path from a uniform start; embedding = centroid + N(0, sigma^2 I).
std::vector<SegmentEvent> gen_author_stream(const TopicModel& model, std::int64_t author_id,
                                            std::size_t length, std::uint64_t seed);

enum class Task : std::uint8_t { Ctr = 0, Wtr = 1, Lvtr = 2, Gtr = 3 };
inline constexpr std::size_t kNumTasks = 4;
inline constexpr std::array<Task, kNumTasks> kTasks = {Task::Ctr, Task::Wtr, Task::Lvtr, Task::Gtr};
std::string_view task_name(Task t);

using TaskArray = std::array<double, kNumTasks>;

struct UserModel {
  std::int64_t user_id = 0;
  std::vector<double> affinity;  // per topic
  TaskArray base_rate{};         // per-task logit offsets
};

struct InteractionRecord {
  std::int64_t user_id = 0;
  std::int64_t author_id = 0;
  std::uint32_t at_seq_index = 0;
  std::array<std::uint8_t, kNumTasks> labels{};

  std::uint8_t label(Task t) const { return labels[static_cast<std::size_t>(t)]; }
};

// Which segment's topic drives the labels of an interaction at index t.
enum class HorizonRule : std::uint8_t {
  NextSegment,     // topic at t + 1: future content matters
  CurrentSegment,  // topic at t: negative control
};

struct UserParams {
  std::size_t num_users = 200;
  // affinity[u][k] = scale * <z_u, y_k> / sqrt(rank), z and y standard normal.
  double affinity_scale = 2.0;
  std::size_t affinity_rank = 4;
  TaskArray base_rate = {-1.0, -2.0, -1.5, -2.5};
  double base_rate_jitter = 0.3;
};

std::vector<UserModel> gen_users(const TopicModel& model, const UserParams& params, std::uint64_t seed);

struct InteractionParams {
  std::size_t count = 10000;
  TaskArray task_weight = {1.0, 0.8, 0.9, 1.2};
  HorizonRule horizon = HorizonRule::NextSegment;
};

// Label probability for one task: sigmoid(base_rate + affinity[topic] * weight).
double label_probability(const UserModel& user, std::size_t topic, Task task, const TaskArray& task_weight);

// Draws the four labels of one interaction. Throws InvalidArgument when the
// horizon segment does not exist (interaction at the final segment under NextSegment).
InteractionRecord draw_interaction(const UserModel& user, std::span<const SegmentEvent> stream,
                                   std::uint32_t at_seq_index, const InteractionParams& params,
                                   std::mt19937_64& rng);

// Uniform (user, author, position) triples; positions exclude each stream's final segment.
std::vector<InteractionRecord> gen_interactions(std::span<const UserModel> users,
                                                std::span<const std::vector<SegmentEvent>> streams,
                                                const InteractionParams& params, std::uint64_t seed);

struct CorpusConfig {
  TopicModelParams topics;
  std::size_t num_authors = 50;
  std::size_t stream_length = 400;
  UserParams users;
  InteractionParams interactions;
};

struct Corpus {
  TopicModel topic_model;
  std::vector<UserModel> users;
  std::vector<std::vector<SegmentEvent>> streams;  // index = author_id
  std::vector<InteractionRecord> interactions;
};

// Sub-seeds per part are derived from `seed` by name ("topics", "author:<id>", "users", "interactions").
Corpus gen_corpus(const CorpusConfig& config, std::uint64_t seed);

// ---- Files ----------------------------------------------------------------
// segments:      "author_id seq_index e_0 ... e_{d-1}"       (one segment per line)
// interactions:  "user_id author_id at_seq_index ctr wtr lvtr gtr"
// ground truth:  "author_id seq_index true_topic"
// topic model:   "num_topics dim self_stay noise_sigma", then num_topics centroid
//                lines, then num_topics transition rows.
// Lines beginning with '#' are headers/comments. Reals use shortest round-trip form.
void write_segments(const std::filesystem::path& path, std::span<const std::vector<SegmentEvent>> streams);
std::vector<SegmentEvent> read_segments(const std::filesystem::path& path);
// Binary alternative: "FSSG", version, dim (u32), count (u64), then per segment
// author_id (i64), seq_index (u32), dim f64 values; all little-endian.
void write_segments_binary(const std::filesystem::path& path, std::span<const std::vector<SegmentEvent>> streams);
std::vector<SegmentEvent> read_segments_binary(const std::filesystem::path& path);

void write_interactions(const std::filesystem::path& path, std::span<const InteractionRecord> records);
std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path);

struct GroundTruthRow {
  std::int64_t author_id;
  std::uint32_t seq_index;
  std::int32_t true_topic;
};
void write_ground_truth(const std::filesystem::path& path, std::span<const std::vector<SegmentEvent>> streams);
std::vector<GroundTruthRow> read_ground_truth(const std::filesystem::path& path);

void write_topic_model(const std::filesystem::path& path, const TopicModel& model);
TopicModel read_topic_model(const std::filesystem::path& path);

}  // namespace foresight::synth
