// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "foresight/error.hpp"
#include "foresight/io.hpp"

namespace foresight::quant {

namespace {

constexpr std::uint32_t kMagic = 0x42435346;  // "FSCB"
constexpr std::uint32_t kVersion = 1;

template <typename A, typename B>
double sq_dist(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

struct Nearest {
  std::uint32_t index;
  double dist;
};

Nearest nearest_row(std::span<const double> p, const std::vector<double>& centres, std::size_t dim) {
  const std::size_t k = centres.size() / dim;
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t c = 0; c < k; ++c) {
    const double d = sq_dist(p, std::span<const double>(centres.data() + c * dim, dim));
    if (d < best.dist) best = {static_cast<std::uint32_t>(c), d};
  }
  return best;
}

}  // namespace

PointSet PointSet::from_segments(std::span<const synth::SegmentEvent> events) {
  PointSet ps;
  if (events.empty()) return ps;
  ps.dim = events.front().embedding.size();
  ps.data.reserve(events.size() * ps.dim);
  for (const auto& ev : events) {
    if (ev.embedding.size() != ps.dim) throw InvalidArgument("PointSet: mixed embedding dimensions");
    ps.data.insert(ps.data.end(), ev.embedding.begin(), ev.embedding.end());
  }
  return ps;
}

PointSet PointSet::from_rows(std::span<const std::vector<double>> rows) {
  PointSet ps;
  if (rows.empty()) return ps;
  ps.dim = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != ps.dim) throw InvalidArgument("PointSet: mixed dimensions");
    ps.data.insert(ps.data.end(), r.begin(), r.end());
  }
  return ps;
}

Codebook::Codebook(std::size_t n, std::size_t dim, std::vector<float> centroids, double train_inertia)
    : n_(n), dim_(dim), centroids_(std::move(centroids)), inertia_(train_inertia) {
  if (n_ < 1 || dim_ < 1) throw InvalidArgument("Codebook: N and dim must be positive");
  if (centroids_.size() != n_ * dim_) throw InvalidArgument("Codebook: centroid table size mismatch");
  if (!std::all_of(centroids_.begin(), centroids_.end(), [](float x) { return std::isfinite(x); })) {
    throw InvalidArgument("Codebook: non-finite centroid entry");
  }
  if (!(inertia_ >= 0.0)) throw InvalidArgument("Codebook: inertia must be nonnegative");
}

std::vector<std::uint8_t> Codebook::serialize() const {
  io::ByteWriter w;
  w.u32(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(n_));
  w.u32(static_cast<std::uint32_t>(dim_));
  for (float x : centroids_) w.f32(x);
  w.f64(inertia_);
  return w.take();
}

Codebook Codebook::deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.u32() != kMagic) throw IntegrityError("not a codebook file (bad magic)");
  if (const auto v = r.u32(); v != kVersion) throw IntegrityError("unsupported codebook version " + std::to_string(v));
  const std::size_t n = r.u32();
  const std::size_t dim = r.u32();
  if (n == 0 || dim == 0 || r.remaining() != n * dim * 4 + 8) throw IntegrityError("codebook size does not match header");
  std::vector<float> c(n * dim);
  for (auto& x : c) x = r.f32();
  const double inertia = r.f64();
  try {
    return Codebook(n, dim, std::move(c), inertia);
  } catch (const InvalidArgument& e) {
    throw IntegrityError(e.what());
  }
}

void Codebook::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

Codebook Codebook::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

std::string Codebook::content_hash() const { return io::sha256_hex(serialize()); }

std::vector<double> kmeanspp_seed(const PointSet& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.count(), dim = points.dim;
  std::vector<double> centres;
  centres.reserve(k * dim);
  auto add = [&](std::size_t i) {
    auto p = points.point(i);
    centres.insert(centres.end(), p.begin(), p.end());
  };
  add(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points.point(i), std::span<const double>(centres.data(), dim));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (centres.size() < k * dim) {
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = unif(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    add(pick);
    const std::span<const double> c(centres.data() + centres.size() - dim, dim);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points.point(i), c));
  }
  return centres;
}

Codebook train_kmeans(const PointSet& points, const KMeansConfig& config, KMeansTrace* trace) {
  const std::size_t n = points.count(), dim = points.dim, k = config.num_codes;
  if (n == 0) throw InvalidArgument("train_kmeans: no embeddings");
  if (k < 1) throw InvalidArgument("train_kmeans: N must be >= 1");
  if (n < k) {
    throw InvalidArgument("train_kmeans: " + std::to_string(n) + " points cannot fill " + std::to_string(k) + " codes");
  }
  if (config.max_iters < 1) throw InvalidArgument("train_kmeans: max_iters must be >= 1");
  if (!(config.tol >= 0.0)) throw InvalidArgument("train_kmeans: tol must be >= 0");

  std::mt19937_64 rng(config.seed);
  auto centres = kmeanspp_seed(points, k, rng);
  if (trace) trace->initial_centroids = centres;

  std::vector<std::uint32_t> assign(n);
  std::vector<double> dist(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  double prev = std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto nr = nearest_row(points.point(i), centres, dim);
      assign[i] = nr.index;
      dist[i] = nr.dist;
      inertia += nr.dist;
    }
    if (trace) {
      trace->assignments.push_back(assign);
      trace->inertia.push_back(inertia);
    }
    const bool converged = std::isfinite(prev) && (prev <= 0.0 || (prev - inertia) / prev < config.tol);
    prev = inertia;
    if (converged) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = points.point(i);
      double* s = sums.data() + assign[i] * dim;
      for (std::size_t j = 0; j < dim; ++j) s[j] += p[j];
      counts[assign[i]] += 1;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) centres[c * dim + j] = sums[c * dim + j] / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      // Farthest point from its nearest (updated) centre.
      std::size_t far = 0;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = nearest_row(points.point(i), centres, dim).dist;
        if (d > best) {
          best = d;
          far = i;
        }
      }
      auto p = points.point(far);
      std::copy(p.begin(), p.end(), centres.begin() + static_cast<std::ptrdiff_t>(c * dim));
      counts[c] = 1;
      if (trace) trace->empty_repairs += 1;
    }
  }

  std::vector<float> table(centres.size());
  std::transform(centres.begin(), centres.end(), table.begin(), [](double x) { return static_cast<float>(x); });
  double final_inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      best = std::min(best, sq_dist(points.point(i), std::span<const float>(table.data() + c * dim, dim)));
    }
    final_inertia += best;
  }
  return Codebook(k, dim, std::move(table), final_inertia);
}

Sid nearest_code(std::span<const double> embedding, const Codebook& codebook) {
  if (embedding.size() != codebook.dim()) {
    throw InvalidArgument("nearest_code: embedding has dimension " + std::to_string(embedding.size()) +
                          ", codebook expects " + std::to_string(codebook.dim()));
  }
  Sid best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < codebook.size(); ++c) {
    const double d = sq_dist(embedding, codebook.centroid(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<Sid>(c);
    }
  }
  return best;
}

std::vector<QuantizedSegment> quantize_stream(std::span<const synth::SegmentEvent> events, const Codebook& codebook) {
  std::vector<QuantizedSegment> out;
  out.reserve(events.size());
  for (const auto& ev : events) out.push_back({ev.author_id, ev.seq_index, nearest_code(ev.embedding, codebook)});
  return out;
}

}  // namespace foresight::quant
