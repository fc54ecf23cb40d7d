// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "foresight/params.hpp"
#include "foresight/tape.hpp"

namespace foresight::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;
};

// Relative error with a floor: gradients smaller than `floor` in magnitude
// are compared absolutely against it.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central differences against the analytic gradient for every scalar of
// every parameter. `loss` reads the store's current values; `grads` must
// leave d(loss)/d(param) in store.at(name).grad.
inline GradCheckResult check_param_grads(nn::ParamStore& store, const std::function<double()>& loss,
                                         const std::function<void()>& grads, double eps = 1e-5) {
  store.zero_grad();
  grads();
  GradCheckResult r;
  for (auto& [name, p] : store) {
    auto values = p.value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss();
      values[i] = saved - eps;
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double e = rel_err(p.grad[i], numeric);
      ++r.checked;
      if (e > r.max_rel_err) {
        r.max_rel_err = e;
        r.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

// Gradient check for a graph built from the store's parameters.
inline GradCheckResult check_graph(nn::ParamStore& store, const std::function<nn::Var(nn::Tape&)>& build,
                                   double eps = 1e-5) {
  auto loss = [&] {
    nn::Tape tape(&store);
    return tape.value(build(tape))[0];
  };
  auto grads = [&] {
    nn::Tape tape(&store);
    tape.backward(build(tape));
    tape.accumulate_param_grads(store);
  };
  return check_param_grads(store, loss, grads, eps);
}

inline nn::Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  nn::Tensor t({rows, cols});
  for (auto& x : t.data()) x = n(rng);
  return t;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("foresight-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace foresight::testing
