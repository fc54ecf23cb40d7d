// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "foresight/error.hpp"
#include "foresight/io.hpp"
#include "foresight/predictor.hpp"
#include "support.hpp"

using namespace foresight;
using namespace foresight::predictor;
using foresight::testing::check_param_grads;
using foresight::testing::TempDir;
using nn::Tape;
using nn::Tensor;

namespace {

PredictorConfig tiny(std::size_t enc = 1, std::size_t dec = 1) {
  PredictorConfig c;
  c.d_model = 8;
  c.enc_layers = enc;
  c.dec_layers = dec;
  c.window = 6;
  c.num_codes = 12;
  c.freq_cap = 4;
  c.ffn_hidden = 16;
  c.seed = 42;
  return c;
}

HistoryWindow random_window(const PredictorConfig& c, std::mt19937_64& rng, std::size_t min_valid = 1) {
  HistoryWindow w;
  w.pad_code = c.pad_code();
  w.valid_len = std::uniform_int_distribution<std::size_t>(min_valid, c.window)(rng);
  w.sids.assign(c.window, c.pad_code());
  w.freqs.assign(c.window, 0);
  std::uniform_int_distribution<Sid> sid(0, static_cast<Sid>(c.num_codes - 1));
  std::uniform_int_distribution<std::uint32_t> freq(1, static_cast<std::uint32_t>(c.freq_cap + 3));
  for (std::size_t i = w.first_valid(); i < c.window; ++i) {
    w.sids[i] = sid(rng);
    w.freqs[i] = freq(rng);
  }
  return w;
}

void randomize(nn::ParamStore& store, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> g(0.0, scale);
  for (auto& [_, p] : store) {
    for (auto& v : p.value.data()) v = g(rng);
  }
}

}  // namespace

TEST_CASE("embedding is the sum of sid, frequency and position rows") {
  auto c = tiny();
  PredictorModel m(c);
  std::mt19937_64 rng(1);
  const auto& sid = m.params().at("sid_table").value;
  const auto& freq = m.params().at("freq_table").value;
  const auto& pos = m.params().at("pos_table").value;
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = random_window(c, rng, 0);
    const auto e = embed_window(m, w);
    REQUIRE(e.rows() == c.window);
    for (std::size_t i = 0; i < c.window; ++i) {
      const std::size_t f = std::min<std::size_t>(w.freqs[i], c.freq_cap);
      for (std::size_t j = 0; j < c.d_model; ++j) CHECK(e(i, j) == (sid(w.sids[i], j) + freq(f, j)) + pos(i, j));
    }
  }
  HistoryWindow bad = random_window(c, rng);
  bad.sids.back() = static_cast<Sid>(c.num_codes);  // pad code at a valid position
  CHECK_THROWS_AS(embed_window(m, bad), InvalidArgument);
}

TEST_CASE("encoder") {
  std::mt19937_64 rng(2);
  SUBCASE("no layers is the identity") {
    const auto c = tiny(0, 1);
    PredictorModel m(c);
    const auto w = random_window(c, rng);
    const auto e = embed_window(m, w);
    CHECK(encode(m, e, w.mask()) == e);
  }
  SUBCASE("zero weights pass the residual through") {
    const auto c = tiny(2, 1);
    PredictorModel m(c);
    for (auto& [name, p] : m.params()) {
      if (name.starts_with("enc.")) p.value.fill(0.0);
    }
    const auto w = random_window(c, rng);
    const auto e = embed_window(m, w);
    CHECK(encode(m, e, w.mask()) == e);
  }
  SUBCASE("one layer equals the hand composition") {
    const auto c = tiny(1, 1);
    PredictorModel m(c);
    randomize(m.params(), rng);
    const auto w = random_window(c, rng);
    const auto mask = w.mask();
    const auto e = embed_window(m, w);

    Tape t(&m.params());
    auto x = t.leaf(e);
    auto p = [&](const char* n) { return t.param(std::string("enc.0.") + n); };
    auto a = nn::attention(t, t.matmul(x, p("wq")), t.matmul(x, p("wk")), t.matmul(x, p("wv")), mask);
    x = t.add(x, t.matmul(a, p("wo")));
    x = t.add(x, nn::ffn(t, x, p("w1"), p("b1"), p("w2"), p("b2")));
    CHECK(encode(m, e, mask) == t.value(x));
  }
  SUBCASE("fully masked window rejected") {
    const auto c = tiny();
    PredictorModel m(c);
    HistoryWindow w;
    w.sids.assign(c.window, c.pad_code());
    w.freqs.assign(c.window, 0);
    w.pad_code = c.pad_code();
    const auto e = embed_window(m, w);
    CHECK_THROWS_AS(encode(m, e, w.mask()), InvalidArgument);
    CHECK_THROWS_AS(decode(m, e, w.mask()), InvalidArgument);
    CHECK_THROWS_AS(predict_next(m, w), InvalidArgument);
  }
}

TEST_CASE("decoder") {
  std::mt19937_64 rng(3);
  SUBCASE("no layers returns the BOS row") {
    auto c = tiny(1, 0);
    c.zero_init_output = false;
    PredictorModel m(c);
    const auto w = random_window(c, rng);
    const auto d = decode(m, embed_window(m, w), w.mask());
    const auto bos = m.params().at("sid_table").value.row(c.bos_row());
    REQUIRE(d.rows() == 1);
    CHECK(std::equal(bos.begin(), bos.end(), d.data().begin()));
  }
  SUBCASE("single valid key with identity projections") {
    auto c = tiny(1, 1);
    PredictorModel m(c);
    randomize(m.params(), rng);
    auto& ps = m.params();
    for (const char* n : {"dec.0.wv", "dec.0.wo"}) {
      auto& t = ps.at(n).value;
      t.fill(0.0);
      for (std::size_t i = 0; i < c.d_model; ++i) t(i, i) = 1.0;
    }
    ps.at("dec.0.w2").value.fill(0.0);
    ps.at("dec.0.b2").value.fill(0.0);
    const Tensor enc = testing::random_tensor(c.window, c.d_model, rng);
    std::vector<std::uint8_t> mask(c.window, 0);
    mask[4] = 1;
    const auto d = decode(m, enc, mask);
    const auto bos = ps.at("sid_table").value.row(c.bos_row());
    for (std::size_t j = 0; j < c.d_model; ++j) CHECK(d(0, j) == doctest::Approx(bos[j] + enc(4, j)).epsilon(1e-14));
  }
  SUBCASE("one layer equals the hand composition") {
    const auto c = tiny(1, 1);
    PredictorModel m(c);
    randomize(m.params(), rng);
    const auto w = random_window(c, rng);
    const auto mask = w.mask();
    const Tensor enc = testing::random_tensor(c.window, c.d_model, rng);

    Tape t(&m.params());
    const std::size_t bos = c.bos_row();
    auto d = t.gather_rows(t.param("sid_table"), std::span<const std::size_t>(&bos, 1));
    auto k = t.leaf(enc);
    auto p = [&](const char* n) { return t.param(std::string("dec.0.") + n); };
    auto a = nn::attention(t, t.matmul(d, p("wq")), t.matmul(k, p("wk")), t.matmul(k, p("wv")), mask);
    d = t.add(d, t.matmul(a, p("wo")));
    d = t.add(d, nn::ffn(t, d, p("w1"), p("b1"), p("w2"), p("b2")));
    CHECK(decode(m, enc, mask) == t.value(d));
  }
}

TEST_CASE("classifier") {
  std::mt19937_64 rng(4);
  PredictorConfig c = tiny();
  c.d_model = 32;
  c.num_codes = 8;
  PredictorModel m(c);
  const auto& table = m.params().at("sid_table").value;

  const std::vector<double> zero(c.d_model, 0.0);
  for (double p : classify(m, zero)) CHECK(p == doctest::Approx(1.0 / 8).epsilon(1e-15));

  for (std::size_t j = 0; j < c.num_codes; ++j) {
    std::vector<double> d(table.row(j).begin(), table.row(j).end());
    for (auto& v : d) v *= 30.0;
    // Measured precondition: row j has the largest inner product with itself.
    double self = 0;
    for (std::size_t k = 0; k < c.d_model; ++k) self += table(j, k) * table(j, k);
    bool dominant = true;
    for (std::size_t i = 0; i < c.num_codes; ++i) {
      double dot = 0;
      for (std::size_t k = 0; k < c.d_model; ++k) dot += table(j, k) * table(i, k);
      if (i != j && dot >= self) dominant = false;
    }
    REQUIRE(dominant);
    CHECK(argmax(classify(m, d)) == j);
  }

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> d(c.d_model);
    for (auto& v : d) v = std::normal_distribution<double>(0, 3)(rng);
    const auto p = classify(m, d);
    CHECK(p.size() == c.num_codes);
    double s = 0;
    for (double v : p) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax(std::vector<double>{0.1, 0.4, 0.2, 0.4}) == 1);
  auto c = tiny();
  PredictorModel m(c);
  auto& table = m.params().at("sid_table").value;
  for (std::size_t j = 0; j < c.d_model; ++j) table(7, j) = table(3, j);
  std::vector<double> d(table.row(3).begin(), table.row(3).end());
  for (auto& v : d) v *= 50.0;
  CHECK(argmax(classify(m, d)) == 3);
}

TEST_CASE("zero-initialized output path gives an initial loss of ln N") {
  for (std::size_t n : {2u, 12u, 64u}) {
    auto c = tiny(2, 2);
    c.num_codes = n;
    PredictorModel m(c);
    std::mt19937_64 rng(n);
    std::vector<TrainExample> batch;
    for (int i = 0; i < 16; ++i) batch.push_back({random_window(c, rng), static_cast<Sid>(rng() % n)});
    CHECK(std::abs(batch_loss(m, batch) - std::log(static_cast<double>(n))) < 1e-9);
    CHECK(std::abs(train_step(m, batch, {}) - std::log(static_cast<double>(n))) < 1e-9);
  }
}

TEST_CASE("predictor gradients match finite differences") {
  for (bool norm : {false, true}) {
    auto c = tiny(1, 1);
    c.rms_norm = norm;
    c.zero_init_output = false;
    PredictorModel m(c);
    std::mt19937_64 rng(5);
    std::vector<TrainExample> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({random_window(c, rng), static_cast<Sid>(rng() % c.num_codes)});
    const auto r = check_param_grads(
        m.params(), [&] { return batch_loss(m, batch); }, [&] { loss_and_grad(m, batch); });
    INFO(r.worst);
    CHECK(r.checked == m.params().scalar_count());
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("pad rows receive no gradient and do not affect outputs") {
  auto c = tiny(2, 2);
  c.zero_init_output = false;
  PredictorModel m(c);
  std::mt19937_64 rng(6);
  std::vector<TrainExample> batch;
  for (int i = 0; i < 8; ++i) {
    auto w = random_window(c, rng);
    if (w.valid_len == c.window) w = seqstore::make_window(seqstore::compress(std::vector<Sid>{1, 2}), 2, c.window, c.pad_code());
    batch.push_back({w, 3});
  }
  m.params().zero_grad();
  loss_and_grad(m, batch);
  for (double g : m.params().at("sid_table").grad.row(c.pad_code())) CHECK(g == 0.0);
  for (double g : m.params().at("freq_table").grad.row(0)) CHECK(g == 0.0);

  const auto before = predict_next(m, batch[0].window);
  for (auto& v : m.params().at("sid_table").value.row(c.pad_code())) v += 7.5;
  for (auto& v : m.params().at("freq_table").value.row(0)) v -= 3.0;
  const auto after = predict_next(m, batch[0].window);
  for (std::size_t i = 0; i < c.d_model; ++i) {
    CHECK(std::abs(before.history_encoding[i] - after.history_encoding[i]) <= 1e-12);
    CHECK(std::abs(before.foresight_embedding[i] - after.foresight_embedding[i]) <= 1e-12);
  }
  for (std::size_t i = 0; i < c.num_codes; ++i) CHECK(std::abs(before.probs[i] - after.probs[i]) <= 1e-12);
}

TEST_CASE("inference is pure and pooling follows the config") {
  auto c = tiny(1, 1);
  c.zero_init_output = false;
  PredictorModel m(c);
  std::mt19937_64 rng(8);
  const auto w = random_window(c, rng, 2);
  const auto hash = m.params().content_hash();
  const auto a = predict_next(m, w);
  const auto b = predict_next(m, w);
  CHECK(a.probs == b.probs);
  CHECK(a.history_encoding == b.history_encoding);
  CHECK(a.predicted == argmax(a.probs));
  CHECK(m.params().content_hash() == hash);

  const auto enc = encode(m, embed_window(m, w), w.mask());
  std::vector<double> mean(c.d_model, 0.0);
  for (std::size_t i = w.first_valid(); i < c.window; ++i) {
    for (std::size_t j = 0; j < c.d_model; ++j) mean[j] += enc(i, j) / static_cast<double>(w.valid_len);
  }
  for (std::size_t j = 0; j < c.d_model; ++j) CHECK(a.history_encoding[j] == doctest::Approx(mean[j]).epsilon(1e-13));

  c.history_pool = HistoryPool::Last;
  PredictorModel last(c, m.params());
  const auto l = predict_next(last, w);
  CHECK(std::equal(l.history_encoding.begin(), l.history_encoding.end(), enc.row(c.window - 1).begin()));
  CHECK(l.probs == a.probs);
}

TEST_CASE("next-run training examples") {
  // Runs 7x2 2x3 7x1 5x1 start at segments 0, 2, 5, 6.
  const auto seq = seqstore::compress(std::vector<Sid>{7, 7, 2, 2, 2, 7, 5});
  const auto all = make_examples(seq, 3, 12, 0, 7);
  REQUIRE(all.size() == 3);
  CHECK(all[0].target == 2);
  CHECK(all[0].window.valid_len == 1);
  CHECK(all[2].target == 5);
  CHECK(all[2].window.sids == std::vector<Sid>{7, 2, 7});
  CHECK(make_examples(seq, 3, 12, 0, 6).size() == 2);
  CHECK(make_examples(seq, 3, 12, 3, 7).size() == 2);
}

TEST_CASE("config validation") {
  auto c = tiny();
  c.d_model = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.num_codes = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.window = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("checkpoint and sidecar") {
  TempDir dir("predictor");
  const auto ckpt = dir.path() / "p.fsnt", meta = dir.path() / "p.json";
  auto c = tiny();
  c.history_pool = HistoryPool::Last;
  PredictorModel m(c);
  save(m, ckpt, meta, "aaaa1111");
  const auto back = load(ckpt, meta, std::string("aaaa1111"));
  CHECK(back.config() == c);
  CHECK(back.params().content_hash() == m.params().content_hash());
  CHECK_NOTHROW(load(ckpt, meta, std::nullopt));
  CHECK_THROWS_AS(load(ckpt, meta, std::string("bbbb2222")), IntegrityError);

  auto text = io::read_text(meta);
  const auto at = text.find("\"last\"");
  REQUIRE(at != std::string::npos);
  text.replace(at, 6, "\"sum\"");
  io::write_text_atomic(dir.path() / "bad.json", text);
  CHECK_THROWS_AS(load(ckpt, dir.path() / "bad.json", std::nullopt), IntegrityError);

  // A checkpoint for a different shape is refused.
  auto other = tiny(2, 1);
  PredictorModel m2(other);
  m2.params().save(dir.path() / "q.fsnt");
  CHECK_THROWS_AS(load(dir.path() / "q.fsnt", meta, std::nullopt), IntegrityError);
}
