// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#include "foresight/seqstore.hpp"

#include <algorithm>
#include <mutex>
#include <string>

#include "foresight/error.hpp"
#include "foresight/io.hpp"

namespace foresight::seqstore {

namespace {
constexpr std::uint32_t kSnapMagic = 0x54535346;  // "FSST"
constexpr std::uint32_t kSnapVersion = 1;
}  // namespace

CompressedSidSequence compress(std::span<const Sid> raw) {
  CompressedSidSequence c;
  for (Sid s : raw) {
    if (!c.distinct.empty() && c.distinct.back() == s) {
      c.freq.back() += 1;
    } else {
      c.distinct.push_back(s);
      c.freq.push_back(1);
    }
  }
  c.total_len = raw.size();
  return c;
}

void validate(const CompressedSidSequence& seq) {
  if (seq.distinct.size() != seq.freq.size()) throw InvalidArgument("compressed sequence: distinct/freq lengths differ");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < seq.distinct.size(); ++i) {
    if (seq.freq[i] < 1) throw InvalidArgument("compressed sequence: run with zero frequency");
    if (i > 0 && seq.distinct[i] == seq.distinct[i - 1]) {
      throw InvalidArgument("compressed sequence: adjacent runs share Sid " + std::to_string(seq.distinct[i]));
    }
    total += seq.freq[i];
  }
  if (total != seq.total_len) throw InvalidArgument("compressed sequence: frequencies do not sum to total_len");
}

std::vector<Sid> decompress(const CompressedSidSequence& seq) {
  validate(seq);
  std::vector<Sid> raw;
  raw.reserve(seq.total_len);
  for (std::size_t i = 0; i < seq.distinct.size(); ++i) raw.insert(raw.end(), seq.freq[i], seq.distinct[i]);
  return raw;
}

std::vector<std::uint8_t> HistoryWindow::mask() const {
  std::vector<std::uint8_t> m(sids.size(), 0);
  std::fill(m.begin() + static_cast<std::ptrdiff_t>(first_valid()), m.end(), 1);
  return m;
}

HistoryWindow make_window(const CompressedSidSequence& seq, std::size_t end_run, std::size_t l_max, Sid pad_code) {
  if (l_max < 1) throw InvalidArgument("make_window: l_max must be >= 1");
  if (end_run > seq.runs()) throw InvalidArgument("make_window: end_run beyond sequence");
  HistoryWindow w;
  w.pad_code = pad_code;
  w.valid_len = std::min(end_run, l_max);
  w.sids.assign(l_max, pad_code);
  w.freqs.assign(l_max, 0);
  const std::size_t begin = end_run - w.valid_len;
  const std::size_t off = l_max - w.valid_len;
  for (std::size_t i = 0; i < w.valid_len; ++i) {
    w.sids[off + i] = seq.distinct[begin + i];
    w.freqs[off + i] = seq.freq[begin + i];
  }
  return w;
}

std::vector<Sid> window_raw(const HistoryWindow& w) {
  std::vector<Sid> raw;
  for (std::size_t i = w.first_valid(); i < w.size(); ++i) raw.insert(raw.end(), w.freqs[i], w.sids[i]);
  return raw;
}

FileAppendLog::FileAppendLog(const std::filesystem::path& path, bool truncate) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | (truncate ? std::ios::trunc : std::ios::app));
  if (!out_) throw IoError("cannot open append log " + path.string());
}

void FileAppendLog::append(std::int64_t author_id, std::uint32_t seq_index, Sid sid) {
  out_ << author_id << ' ' << seq_index << ' ' << sid << '\n';
  out_.flush();
  if (!out_) throw IoError("append log write failed: " + path_.string());
}

std::vector<LogRecord> read_append_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open append log " + path.string());
  std::vector<LogRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto f = io::split_ws(line);
    if (f.size() != 3) throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    out.push_back({io::parse_int(f[0]), static_cast<std::uint32_t>(io::parse_int(f[1])),
                   static_cast<Sid>(io::parse_int(f[2]))});
  }
  return out;
}

AuthorStore::AuthorStore(AuthorStore&& other) noexcept {
  std::unique_lock lock(other.mu_);
  log_ = other.log_;
  authors_ = std::move(other.authors_);
}

AuthorStore& AuthorStore::operator=(AuthorStore&& other) noexcept {
  if (this != &other) {
    std::scoped_lock lock(mu_, other.mu_);
    log_ = other.log_;
    authors_ = std::move(other.authors_);
  }
  return *this;
}

void AuthorStore::append(std::int64_t author_id, std::uint32_t seq_index, Sid sid) {
  std::unique_lock lock(mu_);
  auto it = authors_.find(author_id);
  if (it != authors_.end() && seq_index <= it->second.last_seq_index) {
    throw InvalidArgument("append: seq_index " + std::to_string(seq_index) + " not after " +
                          std::to_string(it->second.last_seq_index) + " for author " + std::to_string(author_id));
  }
  if (log_) log_->append(author_id, seq_index, sid);
  auto& e = authors_[author_id];
  if (!e.seq.distinct.empty() && e.seq.distinct.back() == sid) {
    e.seq.freq.back() += 1;
  } else {
    e.seq.distinct.push_back(sid);
    e.seq.freq.push_back(1);
  }
  e.seq.total_len += 1;
  e.last_seq_index = seq_index;
}

HistoryWindow AuthorStore::window(std::int64_t author_id, std::size_t l_max, Sid pad_code) const {
  std::shared_lock lock(mu_);
  auto it = authors_.find(author_id);
  if (it == authors_.end()) return make_window(CompressedSidSequence{}, 0, l_max, pad_code);
  return make_window(it->second.seq, it->second.seq.runs(), l_max, pad_code);
}

std::optional<CompressedSidSequence> AuthorStore::sequence(std::int64_t author_id) const {
  std::shared_lock lock(mu_);
  auto it = authors_.find(author_id);
  if (it == authors_.end()) return std::nullopt;
  return it->second.seq;
}

std::vector<std::int64_t> AuthorStore::authors() const {
  std::shared_lock lock(mu_);
  std::vector<std::int64_t> out;
  for (const auto& [id, _] : authors_) out.push_back(id);
  return out;
}

std::size_t AuthorStore::author_count() const {
  std::shared_lock lock(mu_);
  return authors_.size();
}

AuthorStore AuthorStore::replay(std::span<const LogRecord> records) {
  AuthorStore store;
  for (const auto& r : records) store.append(r.author_id, r.seq_index, r.sid);
  return store;
}

AuthorStore AuthorStore::replay(const std::filesystem::path& log_path) { return replay(read_append_log(log_path)); }

std::vector<std::uint8_t> AuthorStore::snapshot() const {
  std::shared_lock lock(mu_);
  io::ByteWriter w;
  w.u32(kSnapMagic);
  w.u32(kSnapVersion);
  w.u32(static_cast<std::uint32_t>(authors_.size()));
  for (const auto& [id, e] : authors_) {
    w.i64(id);
    w.u32(e.last_seq_index);
    w.u32(static_cast<std::uint32_t>(e.seq.runs()));
    for (std::size_t i = 0; i < e.seq.runs(); ++i) {
      w.u32(e.seq.distinct[i]);
      w.u32(e.seq.freq[i]);
    }
  }
  return w.take();
}

AuthorStore AuthorStore::from_snapshot(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.u32() != kSnapMagic) throw IntegrityError("not a store snapshot (bad magic)");
  if (r.u32() != kSnapVersion) throw IntegrityError("unsupported snapshot version");
  AuthorStore store;
  const auto n = r.u32();
  for (std::uint32_t a = 0; a < n; ++a) {
    const auto id = r.i64();
    Entry e;
    e.last_seq_index = r.u32();
    const auto runs = r.u32();
    for (std::uint32_t i = 0; i < runs; ++i) {
      e.seq.distinct.push_back(r.u32());
      e.seq.freq.push_back(r.u32());
      e.seq.total_len += e.seq.freq.back();
    }
    try {
      validate(e.seq);
    } catch (const InvalidArgument& ex) {
      throw IntegrityError(std::string("snapshot: ") + ex.what());
    }
    store.authors_.emplace(id, std::move(e));
  }
  if (r.remaining() != 0) throw IntegrityError("trailing bytes in snapshot");
  return store;
}

bool operator==(const AuthorStore& a, const AuthorStore& b) {
  std::shared_lock la(a.mu_, std::defer_lock);
  std::shared_lock lb(b.mu_, std::defer_lock);
  if (&a == &b) return true;
  std::lock(la, lb);
  return a.authors_ == b.authors_;
}

}  // namespace foresight::seqstore
