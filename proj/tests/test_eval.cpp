// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "foresight/baselines.hpp"
#include "foresight/error.hpp"
#include "foresight/experiment.hpp"
#include "foresight/metrics.hpp"
#include "foresight/seqstore.hpp"

using namespace foresight;
using namespace foresight::eval;
using seqstore::compress;
using seqstore::make_window;

namespace {

constexpr Sid kPad = 100;

HistoryWindow window_of(const std::vector<Sid>& raw, std::size_t l_max = 32) {
  const auto c = compress(raw);
  return make_window(c, c.runs(), l_max, kPad);
}

// O(P*N) pairwise count with half credit for ties.
double pairwise_auc(const std::vector<ScoredExample>& ex) {
  double wins = 0, pairs = 0;
  for (const auto& p : ex) {
    if (p.label != 1) continue;
    for (const auto& n : ex) {
      if (n.label != 0) continue;
      pairs += 1;
      wins += p.score > n.score ? 1.0 : (p.score == n.score ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

Sid oracle_max_freq(const std::vector<Sid>& raw, std::size_t l_raw) {
  const std::size_t begin = raw.size() > l_raw ? raw.size() - l_raw : 0;
  Sid best = 0;
  long best_count = -1;
  std::size_t best_last = 0;
  for (std::size_t i = begin; i < raw.size(); ++i) {
    long count = 0;
    std::size_t last = 0;
    for (std::size_t j = begin; j < raw.size(); ++j) {
      if (raw[j] == raw[i]) {
        ++count;
        last = j;
      }
    }
    if (count > best_count || (count == best_count && last > best_last)) {
      best = raw[i];
      best_count = count;
      best_last = last;
    }
  }
  return best;
}

Sid oracle_max_weight(const std::vector<Sid>& sids, const std::vector<std::uint32_t>& freqs) {
  Sid best = 0;
  std::uint64_t best_w = 0;
  std::size_t best_last = 0;
  for (std::size_t i = 0; i < sids.size(); ++i) {
    std::uint64_t w = 0;
    std::size_t last = 0;
    for (std::size_t j = 0; j < sids.size(); ++j) {
      if (sids[j] == sids[i]) {
        w += freqs[j];
        last = j;
      }
    }
    if (w > best_w || (w == best_w && last > best_last)) {
      best = sids[i];
      best_w = w;
      best_last = last;
    }
  }
  return best;
}

synth::TopicModel chain(std::vector<double> transition, std::size_t k) {
  synth::TopicModel m;
  m.num_topics = k;
  m.dim = 1;
  m.transition = std::move(transition);
  for (std::size_t i = 0; i < k; ++i) m.centroids.push_back(static_cast<double>(i));
  return m;
}

}  // namespace

TEST_CASE("rule baselines on worked examples") {
  CHECK(baseline_last(window_of({5, 5, 9})) == 9);
  CHECK(baseline_last(window_of({4, 4})) == 4);
  CHECK(baseline_max_freq(window_of({5, 5, 5, 9, 9, 7}), 100) == 5);
  CHECK(baseline_max_freq(window_of({5, 5, 9, 9}), 100) == 9);
  CHECK(baseline_max_freq(window_of({5, 5, 5, 9, 9, 7}), 3) == 9);
  CHECK(baseline_max_weight(window_of({5, 5, 5, 9, 9, 7})) == 5);
  // Weights 5:2 and 9:2 tie; the most recent run is 5's.
  CHECK(baseline_max_weight(window_of({5, 9, 9, 5})) == 5);

  HistoryWindow empty = make_window({}, 0, 4, kPad);
  CHECK_THROWS_AS(baseline_last(empty), InvalidArgument);
  CHECK_THROWS_AS(baseline_max_freq(empty, 4), InvalidArgument);
  CHECK_THROWS_AS(baseline_max_weight(empty), InvalidArgument);
}

TEST_CASE("rule baselines agree with brute force on random windows") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto len = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
    std::vector<Sid> raw(len);
    for (auto& s : raw) s = static_cast<Sid>(rng() % 5);
    const std::size_t l_max = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const std::size_t l_raw = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    const auto w = window_of(raw, l_max);
    const auto expanded = seqstore::window_raw(w);
    const std::vector<Sid> sids(w.sids.begin() + static_cast<std::ptrdiff_t>(w.first_valid()), w.sids.end());
    const std::vector<std::uint32_t> freqs(w.freqs.begin() + static_cast<std::ptrdiff_t>(w.first_valid()), w.freqs.end());
    CHECK(baseline_last(w) == seqstore::decompress(compress(expanded)).back());
    CHECK(baseline_max_freq(w, l_raw) == oracle_max_freq(expanded, l_raw));
    CHECK(baseline_max_weight(w) == oracle_max_weight(sids, freqs));
  }
}

TEST_CASE("auc examples") {
  CHECK(auc(std::vector<ScoredExample>{{0, 0.9, 1}, {0, 0.1, 0}}) == 1.0);
  CHECK(auc(std::vector<ScoredExample>{{0, 0.3, 1}, {0, 0.3, 0}, {0, 0.3, 1}, {0, 0.3, 0}}) == 0.5);
  CHECK(!auc(std::vector<ScoredExample>{{0, 0.3, 1}, {0, 0.4, 1}}).has_value());
  CHECK(!auc({}).has_value());
  CHECK_THROWS_AS(auc(std::vector<ScoredExample>{{0, NAN, 1}, {0, 0.4, 0}}), InvalidArgument);
}

TEST_CASE("auc rank sum matches the pairwise oracle") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
    std::vector<ScoredExample> ex(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores force ties.
      ex[i].score = static_cast<double>(rng() % 8) / 8.0;
      ex[i].label = static_cast<std::uint8_t>(rng() % 2);
    }
    ex[0].label = 1;
    ex[1].label = 0;
    const auto got = auc(ex);
    REQUIRE(got.has_value());
    CHECK(std::abs(*got - pairwise_auc(ex)) <= 1e-12);
  }
}

TEST_CASE("auc is invariant under monotone transforms") {
  std::mt19937_64 rng(13);
  std::vector<ScoredExample> ex(500), cubed;
  for (auto& e : ex) {
    e.score = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    e.label = static_cast<std::uint8_t>(std::bernoulli_distribution(e.score)(rng));
  }
  cubed = ex;
  for (auto& e : cubed) e.score = e.score * e.score * e.score;
  CHECK(*auc(ex) == *auc(cubed));
}

TEST_CASE("gauc") {
  SUBCASE("hand example") {
    // User 1: AUC 1.0 over 4 examples; user 2: AUC 0.5 over 2.
    const std::vector<ScoredExample> ex = {{1, 0.9, 1}, {1, 0.8, 1}, {1, 0.2, 0}, {1, 0.1, 0},
                                           {2, 0.5, 1}, {2, 0.5, 0}};
    CHECK(*gauc(ex) == 5.0 / 6.0);
    auto with_single = ex;
    with_single.push_back({3, 0.7, 1});
    with_single.push_back({3, 0.1, 1});
    CHECK(*gauc(with_single) == 5.0 / 6.0);
  }
  SUBCASE("one user equals auc") {
    const std::vector<ScoredExample> ex = {{7, 0.9, 1}, {7, 0.3, 0}, {7, 0.5, 1}, {7, 0.6, 0}};
    CHECK(*gauc(ex) == *auc(ex));
  }
  SUBCASE("no qualifying user") {
    CHECK(!gauc(std::vector<ScoredExample>{{1, 0.9, 1}, {2, 0.1, 0}}).has_value());
  }
  SUBCASE("identically distributed users") {
    std::mt19937_64 rng(14);
    std::vector<ScoredExample> ex(10000);
    for (std::size_t i = 0; i < ex.size(); ++i) {
      ex[i].user_id = static_cast<std::int64_t>(i % 20);
      ex[i].score = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      ex[i].label = static_cast<std::uint8_t>(std::bernoulli_distribution(ex[i].score)(rng));
    }
    CHECK(std::abs(*gauc(ex) - *auc(ex)) < 0.02);
  }
}

TEST_CASE("accuracy") {
  const std::vector<Sid> t{1, 2, 3, 4};
  CHECK(accuracy(t, t) == 1.0);
  CHECK(accuracy(std::vector<Sid>{1, 2, 0, 0}, t) == 0.5);
  CHECK_THROWS_AS(accuracy(std::vector<Sid>{1}, t), InvalidArgument);
  CHECK_THROWS_AS(accuracy({}, {}), InvalidArgument);
}

TEST_CASE("bayes oracle") {
  SUBCASE("sticky cycle: the next run is certain") {
    const auto m = chain({0.5, 0.5, 0, 0, 0.5, 0.5, 0.5, 0, 0.5}, 3);
    const std::vector<Sid> map{10, 11, 12};
    CHECK(bayes_oracle(m, 0, map, OracleTarget::NextRun) == 11);
    CHECK(bayes_oracle(m, 2, map, OracleTarget::NextRun) == 10);
    CHECK(bayes_accuracy(m, OracleTarget::NextRun) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(bayes_accuracy(m, OracleTarget::NextSegment) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(bayes_oracle(m, -1, map, OracleTarget::NextRun), InvalidArgument);
  }
  SUBCASE("uniform chain is at chance") {
    const std::size_t k = 8;
    const auto m = chain(std::vector<double>(k * k, 1.0 / k), k);
    CHECK(bayes_accuracy(m, OracleTarget::NextSegment) == doctest::Approx(1.0 / k).epsilon(1e-12));
    std::mt19937_64 rng(15);
    std::size_t cur = 0, hits = 0;
    const std::size_t steps = 20000;
    for (std::size_t i = 0; i < steps; ++i) {
      const auto guess = bayes_next_topic(m, static_cast<std::int32_t>(cur), OracleTarget::NextSegment);
      cur = rng() % k;
      hits += guess == cur;
    }
    CHECK(std::abs(static_cast<double>(hits) / steps - 1.0 / k) < 0.02);
  }
  SUBCASE("closed form agrees with simulation") {
    synth::TopicModelParams p;
    p.num_topics = 6;
    p.self_stay = 0.5;
    p.noise_sigma = 0.0;
    const auto m = synth::gen_topic_model(p, 16);
    const auto s = synth::gen_author_stream(m, 0, 200000, 17);
    double seg_hits = 0, seg_n = 0, run_hits = 0, run_n = 0;
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      const auto cur = s[t].true_topic;
      seg_hits += static_cast<std::int32_t>(bayes_next_topic(m, cur, OracleTarget::NextSegment)) == s[t + 1].true_topic;
      seg_n += 1;
      if (s[t + 1].true_topic != cur) {
        run_hits += static_cast<std::int32_t>(bayes_next_topic(m, cur, OracleTarget::NextRun)) == s[t + 1].true_topic;
        run_n += 1;
      }
    }
    CHECK(std::abs(seg_hits / seg_n - bayes_accuracy(m, OracleTarget::NextSegment)) < 0.01);
    CHECK(std::abs(run_hits / run_n - bayes_accuracy(m, OracleTarget::NextRun)) < 0.01);
  }
}

TEST_CASE("majority topic to sid mapping") {
  const std::vector<std::int32_t> topics{0, 0, 0, 1, 1, 2};
  const std::vector<Sid> sids{3, 3, 1, 2, 0, 4};
  CHECK(majority_sid_per_topic(topics, sids, 4, 5) == std::vector<Sid>{3, 0, 4, 0});
}

TEST_CASE("history windows over raw streams match a compressed-prefix recompute") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 500; ++trial) {
    const auto len = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
    std::vector<Sid> raw(len);
    for (auto& s : raw) s = static_cast<Sid>(rng() % 3);
    const auto t = std::uniform_int_distribution<std::size_t>(0, len - 1)(rng);
    const std::size_t l_max = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    const auto prefix = compress(std::span<const Sid>(raw.data(), t + 1));
    CHECK(window_at(raw, t, l_max, kPad) == make_window(prefix, prefix.runs(), l_max, kPad));
  }
}

TEST_CASE("split points and fractions") {
  const auto p = split_points(100, {0.8, 0.0, 0.2});
  CHECK(p.train_end == 80);
  CHECK(p.test_begin == 80);
  const auto q = split_points(100, {0.6, 0.2, 0.2});
  CHECK(q.train_end == 60);
  CHECK(q.test_begin == 80);
  CHECK_THROWS(SplitFractions{0.8, 0.1, 0.2}.validate());
  CHECK_THROWS(SplitFractions{1.0, 0.0, 0.0}.validate());
}

TEST_CASE("evaluation windows carry the next-run target and current topic") {
  // Runs 1x2 2x1 1x3 0x1 start at 0, 2, 3, 6.
  const std::vector<Sid> raw{1, 1, 2, 1, 1, 1, 0};
  const std::vector<std::int32_t> topics{5, 5, 6, 5, 5, 5, 4};
  const auto ws = eval_windows(compress(raw), topics, 4, kPad, 3, 7);
  REQUIRE(ws.size() == 2);
  CHECK(ws[0].target == 1);
  CHECK(ws[0].current_topic == 6);
  CHECK(ws[1].target == 0);
  CHECK(ws[1].current_topic == 5);
  CHECK(ws[1].window.sids == std::vector<Sid>{kPad, 1, 2, 1});
}
