// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/params.hpp"

#include <cmath>
#include <cstring>

#include "foresight/error.hpp"
#include "foresight/io.hpp"

namespace foresight::nn {

namespace {
constexpr std::uint32_t kMagic = 0x544E5346;  // "FSNT"
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kFooter = 32;
}  // namespace

Param& ParamStore::add(const std::string& name, Tensor init) {
  if (params_.contains(name)) throw InvalidArgument("duplicate parameter name: " + name);
  require_finite(init, "initializer of " + name);
  Param p;
  p.grad = Tensor(init.shape());
  p.adam_m = Tensor(init.shape());
  p.adam_v = Tensor(init.shape());
  p.value = std::move(init);
  return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidArgument("unknown parameter: " + name);
  return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidArgument("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::vector<std::uint8_t> ParamStore::serialize() const {
  io::ByteWriter w;
  w.u32(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, p] : params_) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) w.f64(v);
  }
  auto bytes = w.take();
  const auto digest = io::sha256_hex(bytes);
  for (std::size_t i = 0; i < kFooter; ++i) {
    bytes.push_back(static_cast<std::uint8_t>(std::stoi(digest.substr(2 * i, 2), nullptr, 16)));
  }
  return bytes;
}

ParamStore ParamStore::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFooter + 12) throw IntegrityError("checkpoint too short");
  const auto body = bytes.first(bytes.size() - kFooter);
  const auto digest = io::sha256_hex(body);
  for (std::size_t i = 0; i < kFooter; ++i) {
    const auto expect = static_cast<std::uint8_t>(std::stoi(digest.substr(2 * i, 2), nullptr, 16));
    if (bytes[body.size() + i] != expect) throw IntegrityError("checkpoint content hash mismatch");
  }
  io::ByteReader r(body);
  if (r.u32() != kMagic) throw IntegrityError("not a parameter checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(v));
  }
  ParamStore store;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto rank = r.u32();
    if (rank < 1 || rank > 3) throw IntegrityError("bad tensor rank in checkpoint: " + name);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      n *= d;
    }
    if (n == 0 || n * 8 > r.remaining()) throw IntegrityError("bad tensor shape in checkpoint: " + name);
    std::vector<double> data(n);
    for (auto& x : data) x = r.f64();
    store.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw IntegrityError("trailing bytes in checkpoint");
  return store;
}

void ParamStore::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

ParamStore ParamStore::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

std::string ParamStore::content_hash() const {
  const auto bytes = serialize();
  return io::sha256_hex(std::span(bytes).first(bytes.size() - kFooter));
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  store.step_ += 1;
  const double t = static_cast<double>(store.step_);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : store.params_) {
    auto val = p.value.data();
    auto g = p.grad.data();
    auto m = p.adam_m.data();
    auto v = p.adam_v.data();
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      val[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    require_finite(p.value, "adam update of " + name);
    p.grad.fill(0.0);
  }
}

}  // namespace foresight::nn
