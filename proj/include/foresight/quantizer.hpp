// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "foresight/synth.hpp"

namespace foresight::quant {

// Semantic id: index of a codebook row, in [0, N).
using Sid = std::uint32_t;

// Row-major point matrix (count x dim).
struct PointSet {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t count() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> point(std::size_t i) const { return {data.data() + i * dim, dim}; }

  static PointSet from_segments(std::span<const synth::SegmentEvent> events);
  static PointSet from_rows(std::span<const std::vector<double>> rows);
};

// Immutable table of N centroids; row i is the centroid of Sid i.
class Codebook {
 public:
  Codebook(std::size_t n, std::size_t dim, std::vector<float> centroids, double train_inertia);

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }
  double train_inertia() const { return inertia_; }
  std::span<const float> centroid(std::size_t sid) const { return {centroids_.data() + sid * dim_, dim_}; }
  const std::vector<float>& centroids() const { return centroids_; }

  // "FSCB", version, N, dim (u32 LE), N*dim f32 LE row-major, train_inertia f64 LE.
  std::vector<std::uint8_t> serialize() const;
  static Codebook deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Codebook load(const std::filesystem::path& path);
  std::string content_hash() const;

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::size_t n_;
  std::size_t dim_;
  std::vector<float> centroids_;
  double inertia_;
};

struct KMeansConfig {
  std::size_t num_codes = 64;
  std::size_t max_iters = 100;
  double tol = 1e-7;  // relative inertia improvement
  std::uint64_t seed = 0;
};

// Per-iteration record for tests and diagnostics.
struct KMeansTrace {
  std::vector<double> initial_centroids;                   // k-means++ seeds, row-major
  std::vector<std::vector<std::uint32_t>> assignments;     // one vector per assignment step
  std::vector<double> inertia;                             // objective after each assignment step
  std::size_t empty_repairs = 0;
};

// k-means++ seeding: first centre uniform, then proportional to squared distance.
std::vector<double> kmeanspp_seed(const PointSet& points, std::size_t k, std::mt19937_64& rng);

// Lloyd iterations from k-means++ seeds. Clusters that lose every member are
// re-seeded at the point farthest from its nearest centroid.
Codebook train_kmeans(const PointSet& points, const KMeansConfig& config, KMeansTrace* trace = nullptr);

// argmin of squared Euclidean distance; ties go to the lowest index.
Sid nearest_code(std::span<const double> embedding, const Codebook& codebook);

struct QuantizedSegment {
  std::int64_t author_id;
  std::uint32_t seq_index;
  Sid sid;

  friend bool operator==(const QuantizedSegment&, const QuantizedSegment&) = default;
};

std::vector<QuantizedSegment> quantize_stream(std::span<const synth::SegmentEvent> events, const Codebook& codebook);

}  // namespace foresight::quant
