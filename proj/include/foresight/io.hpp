// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace foresight::io {

// Little-endian byte sink. All multi-byte values are written LE regardless of host order.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v);
  void f64(double v);
  void bytes(std::span<const std::uint8_t> b);
  void str(std::string_view s);  // u32 length prefix + bytes

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked LE reader; throws IntegrityError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32();
  double f64();
  std::span<const std::uint8_t> bytes(std::size_t n);
  std::string str();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// SHA-256, lowercase hex.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

// Shortest round-trip decimal representation.
std::string format_double(double v);
double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);

// Splits on runs of ASCII whitespace.
std::vector<std::string_view> split_ws(std::string_view line);

// Deterministic 64-bit sub-seed: first 8 bytes (LE) of SHA-256("<seed>:<name>").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

}  // namespace foresight::io
