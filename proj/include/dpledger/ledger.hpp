// Copyright 2026 The dpledger Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <fcntl.h>
#include <openssl/evp.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dpledger/errors.hpp"
#include "dpledger/reuse_engine.hpp"

namespace dpledger {

using Digest = std::array<std::uint8_t, 32>;

inline Digest Sha256(std::span<const std::uint8_t> bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(),
                 nullptr) != 1 ||
      len != out.size()) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return out;
}

inline Digest Sha256(std::string_view text) {
  return Sha256(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string ToHex(const Digest& d) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(d.size() * 2);
  for (std::uint8_t b : d) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

inline std::optional<Digest> DigestFromHex(std::string_view hex) {
  if (hex.size() != 64) return std::nullopt;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  Digest d{};
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int hi = nibble(hex[2 * i]);
    const int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    d[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return d;
}

// One released answer. Everything above prev_hash is supplied by the caller;
// the two digests are filled in when the record is sealed onto the chain.
struct NoiseRecord {
  std::uint64_t index = 0;
  Digest dataset_hash{};
  std::string query_type;
  double epsilon = 0.0;
  double delta = 0.0;
  double sigma = 0.0;
  double noisy_response = 0.0;
  double eps_squared_cost = 0.0;
  CaseKind case_tag = CaseKind::kFreshFirstTime;
  std::optional<std::uint64_t> reuse_ref;
  std::int64_t timestamp_ms = 0;
  Digest prev_hash{};
  Digest record_hash{};

  CaseTag tag() const { return {case_tag, reuse_ref}; }

  friend bool operator==(const NoiseRecord&, const NoiseRecord&) = default;
};

struct ChainVerdict {
  bool ok = true;
  std::optional<std::uint64_t> first_bad_index;
};

namespace internal {

class CanonicalWriter {
 public:
  void U8(std::uint8_t v) { bytes_.push_back(v); }
  void U64(std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) {
      bytes_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
  }
  void F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }
  void Bytes(std::span<const std::uint8_t> b) {
    bytes_.insert(bytes_.end(), b.begin(), b.end());
  }
  void String(std::string_view s) {
    U64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

}  // namespace internal

// Canonical byte layout hashed into record_hash: fields in declaration order,
// integers and doubles (IEEE-754 bit patterns) as 8-byte big-endian, strings
// as an 8-byte big-endian length followed by UTF-8 bytes, reuse_ref as a
// presence byte followed by the index (zero when absent).
inline std::vector<std::uint8_t> CanonicalBytes(const NoiseRecord& r) {
  internal::CanonicalWriter w;
  w.U64(r.index);
  w.Bytes(r.dataset_hash);
  w.String(r.query_type);
  w.F64(r.epsilon);
  w.F64(r.delta);
  w.F64(r.sigma);
  w.F64(r.noisy_response);
  w.F64(r.eps_squared_cost);
  w.String(CaseKindName(r.case_tag));
  w.U8(r.reuse_ref.has_value() ? 1 : 0);
  w.U64(r.reuse_ref.value_or(0));
  w.U64(static_cast<std::uint64_t>(r.timestamp_ms));
  w.Bytes(r.prev_hash);
  return w.bytes();
}

inline Digest ComputeRecordHash(const NoiseRecord& r) {
  return Sha256(CanonicalBytes(r));
}

// Checks index sequence, hash links and digests. Reports the smallest index at
// which any check fails.
inline ChainVerdict VerifyRecords(std::span<const NoiseRecord> records) {
  Digest expected_prev{};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const NoiseRecord& r = records[i];
    if (r.index != i || r.prev_hash != expected_prev ||
        r.record_hash != ComputeRecordHash(r)) {
      return {false, i};
    }
    expected_prev = r.record_hash;
  }
  return {true, std::nullopt};
}

inline nlohmann::ordered_json RecordToJson(const NoiseRecord& r) {
  nlohmann::ordered_json j;
  j["index"] = r.index;
  j["dataset_hash"] = ToHex(r.dataset_hash);
  j["query_type"] = r.query_type;
  j["epsilon"] = r.epsilon;
  j["delta"] = r.delta;
  j["sigma"] = r.sigma;
  j["noisy_response"] = r.noisy_response;
  j["eps_squared_cost"] = r.eps_squared_cost;
  j["case_tag"] = CaseKindName(r.case_tag);
  if (r.reuse_ref) {
    j["reuse_ref"] = *r.reuse_ref;
  } else {
    j["reuse_ref"] = nullptr;
  }
  j["timestamp"] = r.timestamp_ms;
  j["prev_hash"] = ToHex(r.prev_hash);
  j["record_hash"] = ToHex(r.record_hash);
  return j;
}

inline NoiseRecord RecordFromJson(const nlohmann::json& j) {
  auto digest = [&](const char* key) {
    auto d = DigestFromHex(j.at(key).get<std::string>());
    if (!d) throw StorageError(std::string("bad hex digest in ") + key);
    return *d;
  };
  NoiseRecord r;
  r.index = j.at("index").get<std::uint64_t>();
  r.dataset_hash = digest("dataset_hash");
  r.query_type = j.at("query_type").get<std::string>();
  r.epsilon = j.at("epsilon").get<double>();
  r.delta = j.at("delta").get<double>();
  r.sigma = j.at("sigma").get<double>();
  r.noisy_response = j.at("noisy_response").get<double>();
  r.eps_squared_cost = j.at("eps_squared_cost").get<double>();
  const auto tag = ParseCaseKind(j.at("case_tag").get<std::string>());
  if (!tag) throw StorageError("unknown case_tag");
  r.case_tag = *tag;
  if (const auto& ref = j.at("reuse_ref"); !ref.is_null()) {
    r.reuse_ref = ref.get<std::uint64_t>();
  }
  r.timestamp_ms = j.at("timestamp").get<std::int64_t>();
  r.prev_hash = digest("prev_hash");
  r.record_hash = digest("record_hash");
  return r;
}

inline std::string RecordToLine(const NoiseRecord& r) {
  return RecordToJson(r).dump() + "\n";
}

// Parses a ledger file. A trailing fragment without a newline is a torn write
// and is dropped; `torn_bytes` reports its length.
inline std::vector<NoiseRecord> ParseLedgerText(std::string_view text,
                                                std::size_t* torn_bytes) {
  std::vector<NoiseRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  if (torn_bytes) *torn_bytes = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (torn_bytes) *torn_bytes = text.size() - pos;
      break;
    }
    ++line_no;
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(RecordFromJson(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw StorageError("ledger line " + std::to_string(line_no) + ": " +
                         e.what());
    } catch (const StorageError& e) {
      throw StorageError("ledger line " + std::to_string(line_no) + ": " +
                         e.what());
    }
  }
  return out;
}

// Append-only hash chain of NoiseRecords, optionally backed by a file with one
// JSON object per line. Appends are serialized internally; readers see
// committed prefixes only.
class Ledger {
 public:
  // In-memory ledger.
  Ledger() = default;

  // File-backed ledger. Loads existing records; a missing file is an empty
  // chain. A torn trailing line from an interrupted append is truncated away.
  explicit Ledger(std::filesystem::path path) : path_(std::move(path)) {
    std::error_code ec;
    if (!std::filesystem::exists(*path_, ec)) return;
    std::ifstream in(*path_, std::ios::binary);
    if (!in) throw StorageError("cannot open ledger " + path_->string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    std::size_t torn = 0;
    records_ = ParseLedgerText(text, &torn);
    if (torn > 0) {
      std::filesystem::resize_file(*path_, text.size() - torn, ec);
      if (ec) throw StorageError("cannot truncate torn ledger tail");
    }
  }

  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  const std::optional<std::filesystem::path>& path() const { return path_; }

  // Seals `draft` (index, prev_hash, record_hash are overwritten) and makes it
  // durable before it becomes visible.
  NoiseRecord Append(NoiseRecord draft) {
    std::unique_lock lock(mutex_);
    draft.index = records_.size();
    draft.prev_hash = records_.empty() ? Digest{} : records_.back().record_hash;
    draft.record_hash = ComputeRecordHash(draft);
    if (path_) Persist(RecordToLine(draft));
    records_.push_back(draft);
    return draft;
  }

  ChainVerdict Verify() const {
    std::shared_lock lock(mutex_);
    return VerifyRecords(records_);
  }

  // Releases of `query_type` on `dataset_hash`, in append order.
  TypeHistory HistoryFor(const Digest& dataset_hash,
                         std::string_view query_type) const {
    std::shared_lock lock(mutex_);
    TypeHistory h;
    for (const NoiseRecord& r : records_) {
      if (r.dataset_hash == dataset_hash && r.query_type == query_type) {
        h.push_back({r.sigma, r.noisy_response, r.index});
      }
    }
    return h;
  }

  std::optional<NoiseRecord> At(std::uint64_t index) const {
    std::shared_lock lock(mutex_);
    if (index >= records_.size()) return std::nullopt;
    return records_[index];
  }

  std::vector<NoiseRecord> Snapshot() const {
    std::shared_lock lock(mutex_);
    return records_;
  }

  // Records [offset, offset + limit) of the chain as of this call.
  std::vector<NoiseRecord> Page(std::size_t offset, std::size_t limit) const {
    std::shared_lock lock(mutex_);
    if (offset >= records_.size()) return {};
    const std::size_t end = std::min(records_.size(), offset + limit);
    return {records_.begin() + static_cast<std::ptrdiff_t>(offset),
            records_.begin() + static_cast<std::ptrdiff_t>(end)};
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
  }

 private:
  void Persist(const std::string& line) {
    const int fd = ::open(path_->c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) {
      throw StorageError("cannot open ledger " + path_->string() + ": " +
                         std::strerror(errno));
    }
    const off_t before = ::lseek(fd, 0, SEEK_END);
    std::size_t written = 0;
    while (written < line.size()) {
      const ssize_t n =
          ::write(fd, line.data() + written, line.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        break;
      }
      written += static_cast<std::size_t>(n);
    }
    const bool ok = written == line.size() && ::fsync(fd) == 0;
    if (!ok && before >= 0) {
      // Roll back a partial line so it never becomes visible on reload.
      [[maybe_unused]] int rc = ::ftruncate(fd, before);
    }
    ::close(fd);
    if (!ok) throw StorageError("failed to persist ledger record");
  }

  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex mutex_;
  std::vector<NoiseRecord> records_;
};

// Rewrites a ledger file from records, bypassing sealing. Used by tooling that
// needs to produce a file verbatim (fixtures, tamper experiments).
inline void WriteLedgerFile(const std::filesystem::path& path,
                            std::span<const NoiseRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  for (const NoiseRecord& r : records) out << RecordToLine(r);
  if (!out) throw StorageError("short write to " + path.string());
}

}  // namespace dpledger
