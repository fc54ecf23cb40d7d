// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "foresight/error.hpp"
#include "foresight/params.hpp"
#include "foresight/tape.hpp"
#include "support.hpp"

using namespace foresight;
using foresight::testing::check_graph;
using foresight::testing::random_tensor;
using nn::Tape;
using nn::Tensor;
using nn::Var;

// Step for op-level checks held to 1e-6: round-off at smaller steps exceeds that.
constexpr double kOpEps = 1e-4;

namespace {

// Direct-loop attention: softmax(q k^T / sqrt(d) restricted to valid keys) v.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<std::uint8_t>& valid) {
  const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols();
  Tensor out({tq, v.cols()});
  for (std::size_t i = 0; i < tq; ++i) {
    std::vector<double> s(tk, -std::numeric_limits<double>::infinity());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < tk; ++j) {
      if (!valid[j]) continue;
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += q(i, c) * k(j, c);
      s[j] = dot / std::sqrt(static_cast<double>(d));
      m = std::max(m, s[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < tk; ++j) z += valid[j] ? std::exp(s[j] - m) : 0.0;
    for (std::size_t j = 0; j < tk; ++j) {
      if (!valid[j]) continue;
      const double w = std::exp(s[j] - m) / z;
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += w * v(j, c);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("matmul hand example and identity") {
    Tape tape;
    auto a = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    auto b = tape.leaf(Tensor::matrix(2, 1, {0, 1}));
    CHECK(tape.value(tape.matmul(a, b)) == Tensor::matrix(2, 1, {2, 4}));

    std::mt19937_64 rng(1);
    auto x = random_tensor(3, 4, rng);
    auto eye = tape.leaf(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    CHECK(tape.value(tape.matmul(eye, tape.leaf(x))) == x);
  }

  TEST_CASE("matmul shape mismatch throws") {
    Tape tape;
    auto a = tape.leaf(Tensor::zeros(2, 3));
    auto b = tape.leaf(Tensor::zeros(2, 3));
    CHECK_THROWS_AS(tape.matmul(a, b), InvalidArgument);
  }

  TEST_CASE("matmul gradients match finite differences") {
    std::mt19937_64 rng(2);
    nn::ParamStore store;
    store.add("a", random_tensor(5, 4, rng));
    store.add("b", random_tensor(4, 3, rng));
    store.add("w", random_tensor(5, 3, rng));
    auto r = check_graph(store, [](Tape& t) {
      // Weighted sum keeps the upstream gradient non-uniform.
      auto c = t.matmul(t.param("a"), t.param("b"));
      auto cw = t.mul_col(t.add(c, t.param("w")), t.slice_cols(t.param("w"), 0, 1));
      return t.sum(cw);
    }, kOpEps);
    CHECK(r.max_rel_err < 1e-6);
  }

  TEST_CASE("softmax examples") {
    Tape tape;
    auto s = tape.value(tape.softmax_rows(tape.leaf(Tensor::matrix(3, 2, {0, 0, std::log(2.0), 0, 1000, 0}))));
    CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(std::abs(s(2, 0) - 1.0) < 1e-12);
    CHECK(s(2, 1) < 1e-12);
  }

  TEST_CASE("softmax rows sum to one on random inputs") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      Tape tape;
      auto s = tape.value(tape.softmax_rows(tape.leaf(random_tensor(4, 7, rng, 10.0))));
      for (std::size_t r = 0; r < 4; ++r) {
        double total = 0;
        for (double x : s.row(r)) total += x;
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }

  TEST_CASE("attention with a single key returns its value") {
    Tape tape;
    auto q = tape.leaf(Tensor::matrix(1, 2, {0.3, -2}));
    auto k = tape.leaf(Tensor::matrix(1, 2, {5, 1}));
    auto v = tape.leaf(Tensor::matrix(1, 2, {7, -3}));
    const std::vector<std::uint8_t> valid = {1};
    CHECK(tape.value(nn::attention(tape, q, k, v, valid)) == Tensor::matrix(1, 2, {7, -3}));
  }

  TEST_CASE("attention over two identical keys averages the values") {
    Tape tape;
    auto q = tape.leaf(Tensor::matrix(1, 2, {0.7, 0.1}));
    auto k = tape.leaf(Tensor::matrix(2, 2, {1, 2, 1, 2}));
    auto v = tape.leaf(Tensor::matrix(2, 2, {1, 10, 3, 20}));
    const std::vector<std::uint8_t> valid = {1, 1};
    const auto out = tape.value(nn::attention(tape, q, k, v, valid));
    CHECK(out(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(out(0, 1) == doctest::Approx(15.0).epsilon(1e-15));
  }

  TEST_CASE("attention matches a direct loop and masks exactly") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const auto q = random_tensor(4, 8, rng), k = random_tensor(5, 8, rng), v = random_tensor(5, 8, rng);
      std::vector<std::uint8_t> valid = {0, 1, 1, 0, 1};
      Tape tape;
      const auto got = tape.value(nn::attention(tape, tape.leaf(q), tape.leaf(k), tape.leaf(v), valid));
      const auto want = naive_attention(q, k, v, valid);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);

      // A masked key's value has no influence.
      auto v2 = v;
      v2(0, 3) += 100.0;
      v2(3, 1) -= 50.0;
      Tape t2;
      const auto moved = t2.value(nn::attention(t2, t2.leaf(q), t2.leaf(k), t2.leaf(v2), valid));
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - moved[i]) < 1e-12);
    }
  }

  TEST_CASE("attention with no valid key throws") {
    Tape tape;
    auto x = tape.leaf(Tensor::zeros(2, 2));
    const std::vector<std::uint8_t> none = {0, 0};
    CHECK_THROWS_AS(nn::attention(tape, x, x, x, none), InvalidArgument);
  }

  TEST_CASE("attention gradients match finite differences") {
    std::mt19937_64 rng(5);
    for (std::size_t heads : {1u, 2u}) {
      nn::ParamStore store;
      store.add("q", random_tensor(4, 8, rng));
      store.add("k", random_tensor(5, 8, rng));
      store.add("v", random_tensor(5, 8, rng));
      store.add("w", random_tensor(4, 8, rng));
      const std::vector<std::uint8_t> valid = {1, 1, 0, 1, 1};
      auto r = check_graph(store, [&](Tape& t) {
        auto a = nn::attention(t, t.param("q"), t.param("k"), t.param("v"), valid, heads);
        return t.sum(t.mul_col(t.add(a, t.param("w")), t.slice_cols(t.param("w"), 2, 3)));
      }, kOpEps);
      INFO(r.worst);
      CHECK(r.max_rel_err < 1e-6);
    }
  }

  TEST_CASE("ffn zero weights give zero and relu blocks negatives") {
    Tape tape;
    auto x = tape.leaf(Tensor::matrix(2, 3, {1, -2, 3, 0.5, 0.5, -1}));
    auto w1 = tape.leaf(Tensor::zeros(3, 4)), b1 = tape.leaf(Tensor::zeros(1, 4));
    auto w2 = tape.leaf(Tensor::zeros(4, 3)), b2 = tape.leaf(Tensor::zeros(1, 3));
    CHECK(tape.value(nn::ffn(tape, x, w1, b1, w2, b2)) == Tensor::zeros(2, 3));

    auto one = tape.leaf(Tensor::matrix(1, 1, {1}));
    auto zero = tape.leaf(Tensor::matrix(1, 1, {0}));
    auto neg = tape.leaf(Tensor::matrix(1, 1, {-1}));
    auto pos = tape.leaf(Tensor::matrix(1, 1, {2}));
    CHECK(tape.value(nn::ffn(tape, neg, one, zero, one, zero))[0] == 0.0);
    CHECK(tape.value(nn::ffn(tape, pos, one, zero, one, zero))[0] == 2.0);
  }

  TEST_CASE("ffn gradients match finite differences") {
    std::mt19937_64 rng(6);
    nn::ParamStore store;
    store.add("x", random_tensor(3, 5, rng));
    store.add("w1", random_tensor(5, 6, rng));
    store.add("b1", random_tensor(1, 6, rng));
    store.add("w2", random_tensor(6, 5, rng));
    store.add("b2", random_tensor(1, 5, rng));
    auto r = check_graph(store, [](Tape& t) {
      auto y = nn::ffn(t, t.param("x"), t.param("w1"), t.param("b1"), t.param("w2"), t.param("b2"));
      return t.sum(t.mul_col(y, t.slice_cols(y, 0, 1)));
    }, kOpEps);
    CHECK(r.max_rel_err < 1e-6);
  }

  TEST_CASE("cross entropy values and analytic gradient") {
    Tape tape;
    auto uniform = tape.cross_entropy(tape.leaf(Tensor::zeros(1, 4)), 2);
    CHECK(tape.value(uniform)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-15));

    Tape sat;
    auto logits = Tensor::zeros(1, 5);
    logits[3] = 30.0;
    // exp(-30) ~ 9e-14 per competitor: the loss is below 4e-13.
    CHECK(sat.value(sat.cross_entropy(sat.leaf(logits), 3))[0] < 1e-12);

    CHECK_THROWS_AS(tape.cross_entropy(tape.leaf(Tensor::zeros(1, 4)), 4), InvalidArgument);

    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      Tape t;
      const auto z = random_tensor(1, 9, rng, 3.0);
      auto zv = t.leaf(z);
      const std::size_t target = static_cast<std::size_t>(trial % 9);
      t.backward(t.cross_entropy(zv, target));
      const auto g = t.grad(zv);
      double m = *std::max_element(z.data().begin(), z.data().end());
      double sum = 0;
      for (double x : z.data()) sum += std::exp(x - m);
      for (std::size_t j = 0; j < 9; ++j) {
        const double p = std::exp(z[j] - m) / sum;
        CHECK(std::abs(g[j] - (p - (j == target ? 1.0 : 0.0))) < 1e-12);
      }
    }
  }

  TEST_CASE("remaining ops pass a composite gradient check") {
    std::mt19937_64 rng(8);
    nn::ParamStore store;
    store.add("table", random_tensor(6, 4, rng));
    store.add("x", random_tensor(5, 4, rng));
    store.add("bias", random_tensor(1, 4, rng));
    store.add("col", random_tensor(5, 1, rng));
    const std::vector<std::size_t> rows = {3, 0, 3, 5, 1};
    const std::vector<std::uint8_t> valid = {0, 1, 1, 1, 0};
    const std::vector<double> labels = {1, 0, 1, 1, 0, 0, 1, 0};
    auto r = check_graph(store, [&](Tape& t) {
      auto g = t.gather_rows(t.param("table"), rows);
      auto h = t.add_row(t.add(g, t.param("x")), t.param("bias"));
      auto n = t.rms_norm_rows(t.scale(h, 0.7));
      auto m = t.mul_col(n, t.param("col"));
      auto mean = t.masked_mean_rows(m, valid);  // 1 x 4
      auto sm = t.masked_softmax_rows(t.slice_rows(m, 1, 3), std::vector<std::uint8_t>{1, 0, 1, 1});
      const std::array<Var, 2> parts = {mean, t.slice_rows(sm, 0, 1)};
      auto cat = t.concat_cols(parts);  // 1 x 8
      auto bce = t.bce_with_logits(cat, labels, 1e-7);
      return t.add(bce, t.cross_entropy(mean, 2));
    }, kOpEps);
    CHECK(r.max_rel_err < 1e-6);
  }

  TEST_CASE("backward basics") {
    nn::ParamStore store;
    store.add("w", Tensor::matrix(2, 3, {1, -2, 3, 4, 5, -6}));
    store.add("unused", Tensor::matrix(1, 2, {1, 1}));
    Tape tape(&store);
    tape.backward(tape.sum(tape.param("w")));
    tape.accumulate_param_grads(store);
    CHECK(store.at("w").grad == Tensor({2, 3}, 1.0));
    CHECK(store.at("unused").grad == Tensor({1, 2}, 0.0));

    Tape t2(&store);
    CHECK_THROWS_AS(t2.backward(t2.param("w")), InvalidArgument);
  }

  TEST_CASE("non-finite values raise a named error") {
    Tape tape;
    auto x = tape.leaf(Tensor::matrix(1, 2, {1e300, 1e300}));
    CHECK_THROWS_AS(tape.matmul(x, tape.leaf(Tensor::matrix(2, 1, {1e300, 1e300}))), NumericError);
    CHECK_THROWS_AS(tape.leaf(Tensor::matrix(1, 1, {std::nan("")})), NumericError);
  }

  TEST_CASE("adam: zero gradient leaves values, hand-computed first step, quadratic bowl") {
    nn::ParamStore store;
    store.add("w", Tensor::matrix(1, 2, {0.5, -1.5}));
    nn::adam_step(store, {});
    CHECK(store.at("w").value == Tensor::matrix(1, 2, {0.5, -1.5}));

    // Step 1: m = (1-b1) g, v = (1-b2) g^2; bias-corrected m_hat = g, v_hat = g^2,
    // so the update is lr * g / (|g| + eps).
    nn::ParamStore s1;
    s1.add("w", Tensor::matrix(1, 1, {2.0}));
    s1.at("w").grad[0] = 0.3;
    nn::AdamConfig cfg{.lr = 0.01};
    nn::adam_step(s1, cfg);
    CHECK(s1.at("w").value[0] == doctest::Approx(2.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-15));
    CHECK(s1.at("w").grad[0] == 0.0);

    nn::ParamStore bowl;
    bowl.add("w", Tensor::matrix(1, 1, {1.0}));
    for (int i = 0; i < 200; ++i) {
      bowl.at("w").grad[0] = 2.0 * bowl.at("w").value[0];
      nn::adam_step(bowl, {.lr = 0.1});
    }
    CHECK(std::abs(bowl.at("w").value[0]) < 1e-3);
  }

  TEST_CASE("param store checkpoint roundtrip and integrity") {
    std::mt19937_64 rng(9);
    nn::ParamStore store;
    store.add("b", random_tensor(2, 3, rng));
    store.add("a", random_tensor(4, 1, rng));
    CHECK_THROWS_AS(store.add("a", Tensor::zeros(1, 1)), InvalidArgument);
    const auto bytes = store.serialize();
    const auto back = nn::ParamStore::deserialize(bytes);
    CHECK(back.names() == store.names());
    for (const auto& name : store.names()) CHECK(back.at(name).value == store.at(name).value);
    CHECK(back.content_hash() == store.content_hash());
    CHECK(back.serialize() == bytes);

    auto bad = bytes;
    bad[bad.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(nn::ParamStore::deserialize(bad), IntegrityError);
    auto cut = bytes;
    cut.resize(cut.size() - 5);
    CHECK_THROWS_AS(nn::ParamStore::deserialize(cut), IntegrityError);
  }
}
