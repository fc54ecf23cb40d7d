// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "foresight/error.hpp"
#include "foresight/io.hpp"
#include "foresight/synth.hpp"
#include "support.hpp"

using namespace foresight;
using namespace foresight::synth;
using foresight::testing::TempDir;

namespace {

TopicModel model_with(std::size_t k, double self_stay, double noise, std::uint64_t seed) {
  TopicModelParams p;
  p.num_topics = k;
  p.dim = 4;
  p.self_stay = self_stay;
  p.noise_sigma = noise;
  return gen_topic_model(p, seed);
}

std::vector<SegmentEvent> one_topic_stream(std::size_t n, std::int32_t topic) {
  std::vector<SegmentEvent> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i].author_id = 0;
    s[i].seq_index = static_cast<std::uint32_t>(i);
    s[i].true_topic = topic;
  }
  return s;
}

}  // namespace

TEST_CASE("topic model rows are stochastic and the diagonal carries self_stay") {
  for (double stay : {0.0, 0.3, 0.9}) {
    const auto m = model_with(5, stay, 0.1, 11);
    for (std::size_t i = 0; i < m.num_topics; ++i) {
      const auto row = m.transition_row(i);
      CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(m.p(i, i) >= stay);
      for (double p : row) CHECK(p >= 0.0);
    }
  }
  const auto two = model_with(2, 0.0, 0.1, 3);
  CHECK(two.p(0, 0) + two.p(0, 1) == doctest::Approx(1.0));
  CHECK(two.p(1, 0) + two.p(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("topic model generation is deterministic per seed") {
  const auto a = model_with(4, 0.5, 0.3, 7);
  const auto b = model_with(4, 0.5, 0.3, 7);
  const auto c = model_with(4, 0.5, 0.3, 8);
  CHECK(a.transition == b.transition);
  CHECK(a.centroids == b.centroids);
  CHECK(a.transition != c.transition);
}

TEST_CASE("topic model rejects degenerate parameters") {
  TopicModelParams p;
  p.self_stay = 1.0;
  CHECK_THROWS_AS(gen_topic_model(p, 1), InvalidArgument);
  p.self_stay = 0.5;
  p.num_topics = 1;
  CHECK_THROWS_AS(gen_topic_model(p, 1), InvalidArgument);
  p.num_topics = 4;
  p.dim = 1;
  CHECK_THROWS_AS(gen_topic_model(p, 1), InvalidArgument);
  p.dim = 4;
  p.noise_sigma = -0.1;
  CHECK_THROWS_AS(gen_topic_model(p, 1), InvalidArgument);
}

TEST_CASE("simulated self-transition frequency matches the diagonal") {
  const auto m = model_with(3, 0.6, 0.0, 21);
  const auto s = gen_author_stream(m, 0, 100001, 99);
  std::array<double, 3> visits{}, stays{};
  for (std::size_t t = 0; t + 1 < s.size(); ++t) {
    const auto k = static_cast<std::size_t>(s[t].true_topic);
    visits[k] += 1;
    if (s[t + 1].true_topic == s[t].true_topic) stays[k] += 1;
  }
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(visits[k] > 1000);
    CHECK(std::abs(stays[k] / visits[k] - m.p(k, k)) < 0.02);
  }
}

TEST_CASE("author streams") {
  SUBCASE("zero noise reproduces centroids exactly") {
    const auto m = model_with(4, 0.5, 0.0, 5);
    for (const auto& ev : gen_author_stream(m, 3, 200, 1)) {
      const auto c = m.centroid(static_cast<std::size_t>(ev.true_topic));
      CHECK(std::equal(c.begin(), c.end(), ev.embedding.begin(), ev.embedding.end()));
      CHECK(ev.author_id == 3);
    }
  }
  SUBCASE("length one") {
    const auto s = gen_author_stream(model_with(4, 0.5, 0.3, 5), 0, 1, 1);
    REQUIRE(s.size() == 1);
    CHECK(s[0].seq_index == 0);
  }
  SUBCASE("indices are consecutive") {
    const auto s = gen_author_stream(model_with(4, 0.5, 0.3, 5), 0, 50, 1);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].seq_index == i);
  }
  SUBCASE("empty stream rejected") {
    CHECK_THROWS_AS(gen_author_stream(model_with(4, 0.5, 0.3, 5), 0, 0, 1), InvalidArgument);
  }
}

TEST_CASE("run lengths follow the geometric law of the realized diagonal") {
  // 16 topics keep the realized diagonal near 0.9, so 10k steps hold ~900 runs.
  const auto m = model_with(16, 0.9, 0.0, 13);
  const auto s = gen_author_stream(m, 0, 10000, 4);
  // A run of topic k lasts 1/(1-p_kk) in expectation.
  std::array<double, 16> runs{}, length{};
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j].true_topic == s[i].true_topic) ++j;
    if (j < s.size()) {  // the final run is censored
      runs[static_cast<std::size_t>(s[i].true_topic)] += 1;
      length[static_cast<std::size_t>(s[i].true_topic)] += static_cast<double>(j - i);
    }
    i = j;
  }
  double total_runs = 0, total_len = 0, expected = 0;
  for (std::size_t k = 0; k < 16; ++k) {
    total_runs += runs[k];
    total_len += length[k];
    expected += runs[k] / (1.0 - m.p(k, k));
  }
  REQUIRE(total_runs > 100);
  CHECK(std::abs(total_len - expected) / expected < 0.10);
}

TEST_CASE("interaction labels") {
  std::mt19937_64 rng(17);
  InteractionParams ip;
  const auto stream = one_topic_stream(3, 0);

  SUBCASE("symmetric Bernoulli") {
    UserModel u{0, {0.0}, {0.0, 0.0, 0.0, 0.0}};
    double pos = 0;
    for (int i = 0; i < 10000; ++i) pos += draw_interaction(u, stream, 0, ip, rng).label(Task::Ctr);
    CHECK(std::abs(pos / 10000 - 0.5) < 0.02);
  }
  SUBCASE("saturated base rate") {
    UserModel u{0, {0.0}, {-30.0, -30.0, -30.0, -30.0}};
    for (int i = 0; i < 1000; ++i) {
      const auto r = draw_interaction(u, stream, 1, ip, rng);
      for (auto t : kTasks) CHECK(r.label(t) == 0);
    }
  }
  SUBCASE("final segment rejected under next-segment labels") {
    UserModel u{0, {0.0}, {}};
    CHECK_THROWS_AS(draw_interaction(u, stream, 2, ip, rng), InvalidArgument);
    ip.horizon = HorizonRule::CurrentSegment;
    CHECK_NOTHROW(draw_interaction(u, stream, 2, ip, rng));
  }
  SUBCASE("next-segment topic drives the rate") {
    // Alternating topics 0,1,0,1,...: at even t the next topic is 1.
    std::vector<SegmentEvent> alt(2001);
    for (std::size_t i = 0; i < alt.size(); ++i) {
      alt[i].seq_index = static_cast<std::uint32_t>(i);
      alt[i].true_topic = static_cast<std::int32_t>(i % 2);
    }
    UserModel u{0, {5.0, 0.0}, {-1.0, -1.0, -1.0, -1.0}};
    double on_a = 0, off_a = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      on_a += draw_interaction(u, alt, 1, ip, rng).label(Task::Ctr);   // next = topic 0
      off_a += draw_interaction(u, alt, 0, ip, rng).label(Task::Ctr);  // next = topic 1
    }
    const double expected_gap = label_probability(u, 0, Task::Ctr, ip.task_weight) -
                                label_probability(u, 1, Task::Ctr, ip.task_weight);
    CHECK(expected_gap > 0.5);
    CHECK(std::abs((on_a - off_a) / n - expected_gap) < 0.03);
  }
}

TEST_CASE("labels correlate with next-segment affinity") {
  CorpusConfig cfg;
  cfg.num_authors = 20;
  cfg.stream_length = 300;
  cfg.users.num_users = 50;
  cfg.interactions.count = 20000;
  const auto c = gen_corpus(cfg, 2024);
  // Point-biserial correlation = Pearson between the 0/1 label and affinity.
  std::vector<double> x, y;
  for (const auto& r : c.interactions) {
    const auto topic = c.streams[static_cast<std::size_t>(r.author_id)][r.at_seq_index + 1].true_topic;
    x.push_back(c.users[static_cast<std::size_t>(r.user_id)].affinity[static_cast<std::size_t>(topic)]);
    y.push_back(r.label(Task::Ctr));
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  CHECK(sxy / std::sqrt(sxx * syy) >= 0.1);
}

TEST_CASE("corpus files roundtrip and are byte-identical per seed") {
  CorpusConfig cfg;
  cfg.num_authors = 3;
  cfg.stream_length = 20;
  cfg.users.num_users = 4;
  cfg.interactions.count = 30;
  const auto c = gen_corpus(cfg, 9);
  const auto c2 = gen_corpus(cfg, 9);
  TempDir dir("synth");
  const auto& d = dir.path();

  write_segments(d / "a.seg", c.streams);
  write_segments(d / "b.seg", c2.streams);
  CHECK(io::sha256_file(d / "a.seg") == io::sha256_file(d / "b.seg"));

  const auto segs = read_segments(d / "a.seg");
  REQUIRE(segs.size() == 60);
  CHECK(segs[25].embedding == c.streams[1][5].embedding);
  CHECK(segs[25].true_topic == -1);

  write_segments_binary(d / "a.bin", c.streams);
  const auto bin = read_segments_binary(d / "a.bin");
  REQUIRE(bin.size() == 60);
  for (std::size_t i = 0; i < bin.size(); ++i) CHECK(bin[i].embedding == segs[i].embedding);

  write_interactions(d / "i.txt", c.interactions);
  const auto inter = read_interactions(d / "i.txt");
  REQUIRE(inter.size() == c.interactions.size());
  for (std::size_t i = 0; i < inter.size(); ++i) {
    CHECK(inter[i].user_id == c.interactions[i].user_id);
    CHECK(inter[i].at_seq_index == c.interactions[i].at_seq_index);
    CHECK(inter[i].labels == c.interactions[i].labels);
  }

  write_ground_truth(d / "gt.txt", c.streams);
  const auto gt = read_ground_truth(d / "gt.txt");
  REQUIRE(gt.size() == 60);
  CHECK(gt[47].true_topic == c.streams[2][7].true_topic);

  write_topic_model(d / "tm.txt", c.topic_model);
  const auto tm = read_topic_model(d / "tm.txt");
  CHECK(tm.transition == c.topic_model.transition);
  CHECK(tm.centroids == c.topic_model.centroids);
  for (std::size_t i = 0; i < tm.num_topics; ++i) {
    const auto row = tm.transition_row(i);
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-9);
  }
}

TEST_CASE("corrupt segment files are rejected") {
  TempDir dir("synth-bad");
  io::write_text_atomic(dir.path() / "bad.seg", "0 0 1.0 2.0\n0 x 1.0 2.0\n");
  CHECK_THROWS_AS(read_segments(dir.path() / "bad.seg"), IntegrityError);
  io::write_text_atomic(dir.path() / "bad.bin", "FSSGxxxx");
  CHECK_THROWS_AS(read_segments_binary(dir.path() / "bad.bin"), IntegrityError);
  CHECK_THROWS_AS(read_segments(dir.path() / "missing.seg"), IoError);
}
