// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "foresight/error.hpp"

namespace foresight::nn {

namespace {

void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw InvalidArgument(std::string(op) + ": " + what);
}

std::string dims(const Tensor& t) { return shape_string(t.shape()); }

}  // namespace

Var Tape::push(Tensor value, std::string_view op) {
  require_finite(value, op);
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_ref(Var v) {
  auto& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

Var Tape::leaf(Tensor value) {
  if (value.rank() == 1) value = Tensor({1, value.size()}, std::vector<double>(value.data().begin(), value.data().end()));
  return push(std::move(value), "leaf");
}

Var Tape::param(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  if (params_ == nullptr) throw InvalidArgument("tape has no parameter store; cannot bind " + name);
  auto v = leaf(params_->at(name).value);
  bound_.emplace(name, v);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require(A.cols() == B.rows(), "matmul", "inner dimensions differ: " + dims(A) + " * " + dims(B));
  Tensor C({A.rows(), B.cols()});
  gemm_nn(A, B, C);
  auto out = push(std::move(C), "matmul");
  nodes_[out.id].back = [this, a, b, out] {
    const auto& g = nodes_[out.id].grad;
    gemm_nt(g, value(b), grad_ref(a));
    gemm_tn(value(a), g, grad_ref(b));
  };
  return out;
}

Var Tape::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require(A.cols() == B.cols(), "matmul_nt", "inner dimensions differ: " + dims(A) + " * " + dims(B) + "^T");
  Tensor C({A.rows(), B.rows()});
  gemm_nt(A, B, C);
  auto out = push(std::move(C), "matmul_nt");
  nodes_[out.id].back = [this, a, b, out] {
    const auto& g = nodes_[out.id].grad;
    gemm_nn(g, value(b), grad_ref(a));
    gemm_tn(g, value(a), grad_ref(b));
  };
  return out;
}

Var Tape::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require(A.same_shape(B), "add", "shape mismatch " + dims(A) + " vs " + dims(B));
  Tensor C = A;
  auto c = C.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += bd[i];
  auto out = push(std::move(C), "add");
  nodes_[out.id].back = [this, a, b, out] {
    const auto g = nodes_[out.id].grad.data();
    auto ga = grad_ref(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto gb = grad_ref(b).data();
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  };
  return out;
}

Var Tape::add_row(Var x, Var bias) {
  const auto& X = value(x);
  const auto& B = value(bias);
  require(B.rows() == 1 && B.cols() == X.cols(), "add_row", "bias " + dims(B) + " does not fit " + dims(X));
  Tensor C = X;
  for (std::size_t r = 0; r < C.rows(); ++r) {
    auto row = C.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += B[j];
  }
  auto out = push(std::move(C), "add_row");
  nodes_[out.id].back = [this, x, bias, out] {
    const auto& g = nodes_[out.id].grad;
    auto gx = grad_ref(x).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    auto& gb = grad_ref(bias);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto row = g.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
    }
  };
  return out;
}

Var Tape::scale(Var x, double s) {
  Tensor C = value(x);
  for (auto& v : C.data()) v *= s;
  auto out = push(std::move(C), "scale");
  nodes_[out.id].back = [this, x, s, out] {
    const auto g = nodes_[out.id].grad.data();
    auto gx = grad_ref(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  };
  return out;
}

Var Tape::relu(Var x) {
  Tensor C = value(x);
  for (auto& v : C.data()) v = v > 0.0 ? v : 0.0;
  auto out = push(std::move(C), "relu");
  nodes_[out.id].back = [this, x, out] {
    const auto g = nodes_[out.id].grad.data();
    const auto xv = value(x).data();
    auto gx = grad_ref(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  };
  return out;
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  auto out = push(Tensor({1, 1}, s), "sum");
  nodes_[out.id].back = [this, x, out] {
    const double g = nodes_[out.id].grad[0];
    for (auto& v : grad_ref(x).data()) v += g;
  };
  return out;
}

Var Tape::gather_rows(Var table, std::span<const std::size_t> rows) {
  const auto& T = value(table);
  require(!rows.empty(), "gather_rows", "no rows requested");
  Tensor C({rows.size(), T.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < T.rows(), "gather_rows",
            "row " + std::to_string(rows[i]) + " out of range for table " + dims(T));
    std::copy_n(T.row(rows[i]).begin(), T.cols(), C.row(i).begin());
  }
  auto out = push(std::move(C), "gather_rows");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  nodes_[out.id].back = [this, table, idx = std::move(idx), out] {
    const auto& g = nodes_[out.id].grad;
    auto& gt = grad_ref(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = g.row(i);
      auto dst = gt.row(idx[i]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  };
  return out;
}

Var Tape::slice_rows(Var x, std::size_t begin, std::size_t end) {
  const auto& X = value(x);
  require(begin < end && end <= X.rows(), "slice_rows", "bad range for " + dims(X));
  Tensor C({end - begin, X.cols()});
  std::copy(X.data().begin() + begin * X.cols(), X.data().begin() + end * X.cols(), C.data().begin());
  auto out = push(std::move(C), "slice_rows");
  nodes_[out.id].back = [this, x, begin, out] {
    const auto g = nodes_[out.id].grad.data();
    auto& gx = grad_ref(x);
    auto dst = gx.data().subspan(begin * gx.cols(), g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  };
  return out;
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t end) {
  const auto& X = value(x);
  require(begin < end && end <= X.cols(), "slice_cols", "bad range for " + dims(X));
  const std::size_t w = end - begin;
  Tensor C({X.rows(), w});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::copy_n(X.row(r).begin() + begin, w, C.row(r).begin());
  }
  auto out = push(std::move(C), "slice_cols");
  nodes_[out.id].back = [this, x, begin, out] {
    const auto& g = nodes_[out.id].grad;
    auto& gx = grad_ref(x);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto src = g.row(r);
      auto dst = gx.row(r).subspan(begin, src.size());
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  };
  return out;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (auto p : parts) {
    require(value(p).rows() == rows, "concat_cols", "row counts differ");
    cols += value(p).cols();
  }
  Tensor C({rows, cols});
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& P = value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(P.row(r).begin(), P.cols(), C.row(r).begin() + off);
    off += P.cols();
  }
  auto out = push(std::move(C), "concat_cols");
  std::vector<Var> inputs(parts.begin(), parts.end());
  nodes_[out.id].back = [this, inputs = std::move(inputs), out] {
    const auto& g = nodes_[out.id].grad;
    std::size_t off = 0;
    for (auto p : inputs) {
      auto& gp = grad_ref(p);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto src = g.row(r).subspan(off, gp.cols());
        auto dst = gp.row(r);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
      off += gp.cols();
    }
  };
  return out;
}

Var Tape::mul_col(Var x, Var col) {
  const auto& X = value(x);
  const auto& K = value(col);
  require(K.cols() == 1 && K.rows() == X.rows(), "mul_col", "column " + dims(K) + " does not fit " + dims(X));
  Tensor C = X;
  for (std::size_t r = 0; r < C.rows(); ++r) {
    for (auto& v : C.row(r)) v *= K[r];
  }
  auto out = push(std::move(C), "mul_col");
  nodes_[out.id].back = [this, x, col, out] {
    const auto& g = nodes_[out.id].grad;
    const auto& X = value(x);
    const auto& K = value(col);
    auto& gx = grad_ref(x);
    auto& gk = grad_ref(col);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto gr = g.row(r);
      auto xr = X.row(r);
      auto gxr = gx.row(r);
      double acc = 0.0;
      for (std::size_t j = 0; j < gr.size(); ++j) {
        gxr[j] += gr[j] * K[r];
        acc += gr[j] * xr[j];
      }
      gk[r] += acc;
    }
  };
  return out;
}

namespace {

// Row-wise softmax restricted to columns where valid[j] != 0 (all columns if valid is empty).
Tensor softmax_impl(const Tensor& X, std::span<const std::uint8_t> valid, std::string_view op) {
  Tensor Y(X.shape());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto x = X.row(r);
    auto y = Y.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (valid.empty() || valid[j]) mx = std::max(mx, x[j]);
    }
    if (!std::isfinite(mx)) throw InvalidArgument(std::string(op) + ": row has no valid positions");
    double z = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (valid.empty() || valid[j]) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
      }
    }
    for (auto& v : y) v /= z;
  }
  return Y;
}

}  // namespace

Var Tape::softmax_rows(Var x) {
  auto out = push(softmax_impl(value(x), {}, "softmax_rows"), "softmax_rows");
  nodes_[out.id].back = [this, x, out] {
    const auto& g = nodes_[out.id].grad;
    const auto& Y = value(out);
    auto& gx = grad_ref(x);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      auto y = Y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += gr[j] * y[j];
      auto dst = gx.row(r);
      for (std::size_t j = 0; j < y.size(); ++j) dst[j] += y[j] * (gr[j] - dot);
    }
  };
  return out;
}

Var Tape::masked_softmax_rows(Var x, std::span<const std::uint8_t> key_valid) {
  require(key_valid.size() == value(x).cols(), "masked_softmax_rows", "mask length differs from column count");
  auto out = push(softmax_impl(value(x), key_valid, "masked_softmax_rows"), "masked_softmax_rows");
  // Masked entries are exactly zero in Y, so the unmasked backward formula
  // already gives them zero gradient.
  nodes_[out.id].back = [this, x, out] {
    const auto& g = nodes_[out.id].grad;
    const auto& Y = value(out);
    auto& gx = grad_ref(x);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      auto y = Y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += gr[j] * y[j];
      auto dst = gx.row(r);
      for (std::size_t j = 0; j < y.size(); ++j) dst[j] += y[j] * (gr[j] - dot);
    }
  };
  return out;
}

Var Tape::masked_mean_rows(Var x, std::span<const std::uint8_t> row_valid) {
  const auto& X = value(x);
  require(row_valid.size() == X.rows(), "masked_mean_rows", "mask length differs from row count");
  const auto n = static_cast<std::size_t>(std::count_if(row_valid.begin(), row_valid.end(), [](auto v) { return v != 0; }));
  require(n > 0, "masked_mean_rows", "no valid rows");
  Tensor C({1, X.cols()});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    if (!row_valid[r]) continue;
    auto row = X.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) C[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : C.data()) v *= inv;
  auto out = push(std::move(C), "masked_mean_rows");
  std::vector<std::uint8_t> mask(row_valid.begin(), row_valid.end());
  nodes_[out.id].back = [this, x, mask = std::move(mask), inv, out] {
    const auto& g = nodes_[out.id].grad;
    auto& gx = grad_ref(x);
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      if (!mask[r]) continue;
      auto dst = gx.row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += inv * g[j];
    }
  };
  return out;
}

Var Tape::rms_norm_rows(Var x, double eps) {
  const auto& X = value(x);
  Tensor Y(X.shape());
  std::vector<double> inv_rms(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto xr = X.row(r);
    double ms = 0.0;
    for (double v : xr) ms += v * v;
    ms /= static_cast<double>(xr.size());
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    auto yr = Y.row(r);
    for (std::size_t j = 0; j < xr.size(); ++j) yr[j] = xr[j] * inv_rms[r];
  }
  auto out = push(std::move(Y), "rms_norm_rows");
  nodes_[out.id].back = [this, x, inv_rms = std::move(inv_rms), out] {
    const auto& g = nodes_[out.id].grad;
    const auto& Y = value(out);
    auto& gx = grad_ref(x);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      auto y = Y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += gr[j] * y[j];
      dot /= static_cast<double>(y.size());
      auto dst = gx.row(r);
      for (std::size_t j = 0; j < y.size(); ++j) dst[j] += inv_rms[r] * (gr[j] - y[j] * dot);
    }
  };
  return out;
}

Var Tape::cross_entropy(Var logits, std::size_t target) {
  const auto& L = value(logits);
  require(L.rows() == 1, "cross_entropy", "logits must be a single row, got " + dims(L));
  require(target < L.cols(), "cross_entropy",
          "target " + std::to_string(target) + " out of range [0, " + std::to_string(L.cols()) + ")");
  auto probs = softmax_impl(L, {}, "cross_entropy");
  double mx = L[0];
  for (double v : L.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : L.data()) z += std::exp(v - mx);
  const double loss = mx + std::log(z) - L[target];
  auto out = push(Tensor({1, 1}, loss), "cross_entropy");
  nodes_[out.id].back = [this, logits, target, probs = std::move(probs), out] {
    const double g = nodes_[out.id].grad[0];
    auto& gl = grad_ref(logits);
    for (std::size_t j = 0; j < probs.size(); ++j) gl[j] += g * (probs[j] - (j == target ? 1.0 : 0.0));
  };
  return out;
}

Var Tape::bce_with_logits(Var z, std::span<const double> labels, double eps) {
  const auto& Z = value(z);
  require(labels.size() == Z.size(), "bce_with_logits", "label count differs from logit count");
  std::vector<double> dz(Z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    const double x = Z[i];
    const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    const double pc = std::clamp(p, eps, 1.0 - eps);
    const double y = labels[i];
    loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    dz[i] = (p > eps && p < 1.0 - eps) ? p - y : 0.0;
  }
  auto out = push(Tensor({1, 1}, loss), "bce_with_logits");
  nodes_[out.id].back = [this, z, dz = std::move(dz), out] {
    const double g = nodes_[out.id].grad[0];
    auto gz = grad_ref(z).data();
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += g * dz[i];
  };
  return out;
}

void Tape::backward(Var loss) {
  const auto& L = value(loss);
  if (L.size() != 1) throw InvalidArgument("backward: loss must be a scalar, got " + dims(L));
  for (auto& n : nodes_) n.grad = Tensor{};
  grad_ref(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.back && !n.grad.empty()) n.back();
  }
}

void Tape::accumulate_param_grads(ParamStore& store) const {
  for (const auto& [name, v] : bound_) {
    if (!has_grad(v)) continue;
    auto dst = store.at(name).grad.data();
    const auto src = nodes_[v.id].grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

Var attention(Tape& tape, Var q, Var k, Var v, std::span<const std::uint8_t> key_valid, std::size_t heads) {
  const std::size_t d = tape.value(q).cols();
  if (tape.value(k).cols() != d || tape.value(v).cols() != d || tape.value(k).rows() != tape.value(v).rows()) {
    throw InvalidArgument("attention: q/k/v shapes do not agree");
  }
  if (heads == 0 || d % heads != 0) throw InvalidArgument("attention: width not divisible by head count");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto head = [&](Var qh, Var kh, Var vh) {
    auto scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt);
    auto weights = tape.masked_softmax_rows(scores, key_valid);
    return tape.matmul(weights, vh);
  };
  if (heads == 1) return head(q, k, v);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto b = h * dh, e = b + dh;
    outs.push_back(head(tape.slice_cols(q, b, e), tape.slice_cols(k, b, e), tape.slice_cols(v, b, e)));
  }
  return tape.concat_cols(outs);
}

Var ffn(Tape& tape, Var x, Var w1, Var b1, Var w2, Var b2) {
  auto hidden = tape.relu(tape.add_row(tape.matmul(x, w1), b1));
  return tape.add_row(tape.matmul(hidden, w2), b2);
}

}  // namespace foresight::nn
