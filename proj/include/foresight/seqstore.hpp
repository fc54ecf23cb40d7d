// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <vector>

#include "foresight/quantizer.hpp"

namespace foresight::seqstore {

using quant::Sid;

// Run-length form of a raw Sid stream: distinct[i] repeated freq[i] times.
struct CompressedSidSequence {
  std::vector<Sid> distinct;
  std::vector<std::uint32_t> freq;
  std::uint64_t total_len = 0;

  std::size_t runs() const { return distinct.size(); }
  friend bool operator==(const CompressedSidSequence&, const CompressedSidSequence&) = default;
};

CompressedSidSequence compress(std::span<const Sid> raw);
// Throws InvalidArgument if the sequence violates its invariants.
std::vector<Sid> decompress(const CompressedSidSequence& seq);
void validate(const CompressedSidSequence& seq);

// Most recent runs, front-padded to a fixed length. Positions
// [0, size - valid_len) hold pad_code with freq 0.
struct HistoryWindow {
  std::vector<Sid> sids;
  std::vector<std::uint32_t> freqs;
  std::size_t valid_len = 0;
  Sid pad_code = 0;

  std::size_t size() const { return sids.size(); }
  std::size_t first_valid() const { return sids.size() - valid_len; }
  bool is_valid(std::size_t pos) const { return pos >= first_valid(); }
  std::vector<std::uint8_t> mask() const;

  friend bool operator==(const HistoryWindow&, const HistoryWindow&) = default;
};

// Window over runs [max(0, end_run - l_max), end_run) of seq.
HistoryWindow make_window(const CompressedSidSequence& seq, std::size_t end_run, std::size_t l_max, Sid pad_code);

// The valid part of a window expanded back to raw segments (oldest first).
std::vector<Sid> window_raw(const HistoryWindow& w);

// Durable sink for appends. Implementations throw IoError on failure.
class AppendLog {
 public:
  virtual ~AppendLog() = default;
  virtual void append(std::int64_t author_id, std::uint32_t seq_index, Sid sid) = 0;
};

// Line-delimited "author_id seq_index sid" records, flushed per append.
class FileAppendLog final : public AppendLog {
 public:
  explicit FileAppendLog(const std::filesystem::path& path, bool truncate = false);
  void append(std::int64_t author_id, std::uint32_t seq_index, Sid sid) override;

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct LogRecord {
  std::int64_t author_id;
  std::uint32_t seq_index;
  Sid sid;
};
std::vector<LogRecord> read_append_log(const std::filesystem::path& path);

// Per-author streaming Sid database. Appends are serialized; window() and
// sequence() may run concurrently with appends and always see whole appends.
class AuthorStore {
 public:
  explicit AuthorStore(AppendLog* log = nullptr) : log_(log) {}
  AuthorStore(AuthorStore&& other) noexcept;
  AuthorStore& operator=(AuthorStore&& other) noexcept;

  // Logs first; the in-memory state advances only if the log write succeeded.
  // seq_index must increase strictly per author.
  void append(std::int64_t author_id, std::uint32_t seq_index, Sid sid);

  // All-pad window with valid_len 0 for an unknown author.
  HistoryWindow window(std::int64_t author_id, std::size_t l_max, Sid pad_code) const;
  std::optional<CompressedSidSequence> sequence(std::int64_t author_id) const;
  std::vector<std::int64_t> authors() const;
  std::size_t author_count() const;

  // Rebuilds a store from an append log (no log attached to the result).
  static AuthorStore replay(const std::filesystem::path& log_path);
  static AuthorStore replay(std::span<const LogRecord> records);

  // "FSST", version, author count (u32); per author: author_id (i64),
  // last seq_index (u32), run count (u32), then (sid u32, freq u32) per run.
  std::vector<std::uint8_t> snapshot() const;
  static AuthorStore from_snapshot(std::span<const std::uint8_t> bytes);

  friend bool operator==(const AuthorStore& a, const AuthorStore& b);

 private:
  struct Entry {
    CompressedSidSequence seq;
    std::uint32_t last_seq_index = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  AppendLog* log_ = nullptr;
  mutable std::shared_mutex mu_;
  std::map<std::int64_t, Entry> authors_;
};

}  // namespace foresight::seqstore
