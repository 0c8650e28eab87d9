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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "dpledger/errors.hpp"
#include "dpledger/ledger.hpp"

namespace dpledger {

enum class ColumnType { kNumeric, kCategorical };

// Declared column. Numeric columns commit to a domain [domain_min, domain_max]
// up front; values outside it are rejected at ingestion.
struct ColumnSchema {
  std::string name;
  ColumnType type = ColumnType::kNumeric;
  double domain_min = 0.0;
  double domain_max = 0.0;
};

using Schema = std::vector<ColumnSchema>;

// Parses RFC-4180 CSV: comma separated, optional double-quoted fields with ""
// escapes, CRLF or LF line endings. Blank trailing lines are skipped.
inline std::vector<std::vector<std::string>> ParseCsv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  auto end_row = [&] {
    if (field_started || !row.empty() || !field.empty()) {
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
    }
    row.clear();
    field.clear();
    field_started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) {
          throw IngestionError("line " + std::to_string(line) +
                               ": quote inside unquoted field");
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) throw IngestionError("unterminated quoted field");
  end_row();
  return rows;
}

inline std::optional<double> ParseNumber(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

// Immutable ingested table, stored column-wise.
class Dataset {
 public:
  using Column = std::variant<std::vector<double>, std::vector<std::string>>;

  std::size_t row_count() const { return row_count_; }
  const Digest& content_hash() const { return content_hash_; }
  const Schema& schema() const { return schema_; }

  const ColumnSchema* FindColumn(std::string_view name) const {
    for (const ColumnSchema& c : schema_) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }

  const std::vector<double>& Numeric(std::string_view name) const {
    const auto& col = ColumnOrThrow(name);
    if (const auto* v = std::get_if<std::vector<double>>(&col)) return *v;
    throw NotFound("column '" + std::string(name) + "' is not numeric");
  }

  const std::vector<std::string>& Categorical(std::string_view name) const {
    const auto& col = ColumnOrThrow(name);
    if (const auto* v = std::get_if<std::vector<std::string>>(&col)) return *v;
    throw NotFound("column '" + std::string(name) + "' is not categorical");
  }

  friend Dataset IngestCsv(std::string_view bytes, const Schema& schema);

 private:
  const Column& ColumnOrThrow(std::string_view name) const {
    auto it = columns_.find(name);
    if (it == columns_.end()) {
      throw NotFound("unknown column '" + std::string(name) + "'");
    }
    return it->second;
  }

  Schema schema_;
  std::map<std::string, Column, std::less<>> columns_;
  std::size_t row_count_ = 0;
  Digest content_hash_{};
};

// Builds a Dataset from CSV bytes. The header must name exactly the schema's
// columns (any order). content_hash is SHA-256 over the raw bytes.
inline Dataset IngestCsv(std::string_view bytes, const Schema& schema) {
  if (schema.empty()) throw IngestionError("schema declares no columns");
  const auto rows = ParseCsv(bytes);
  if (rows.empty()) throw IngestionError("empty CSV");
  const auto& header = rows.front();

  std::vector<std::size_t> schema_pos(header.size());
  std::vector<bool> covered(schema.size(), false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& s) {
      return s.name == header[c];
    });
    if (it == schema.end()) {
      throw IngestionError("header column '" + header[c] +
                           "' is not declared in the schema");
    }
    const auto idx = static_cast<std::size_t>(it - schema.begin());
    if (covered[idx]) {
      throw IngestionError("duplicate header column '" + header[c] + "'");
    }
    covered[idx] = true;
    schema_pos[c] = idx;
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (!covered[i]) {
      throw IngestionError("declared column '" + schema[i].name +
                           "' missing from header");
    }
    if (schema[i].type == ColumnType::kNumeric &&
        !(schema[i].domain_max > schema[i].domain_min)) {
      throw IngestionError("column '" + schema[i].name +
                           "' has an empty or inverted domain");
    }
  }
  if (rows.size() < 2) throw IngestionError("CSV has a header but no rows");

  std::vector<Dataset::Column> cols;
  for (const ColumnSchema& s : schema) {
    if (s.type == ColumnType::kNumeric) {
      cols.emplace_back(std::vector<double>{});
    } else {
      cols.emplace_back(std::vector<std::string>{});
    }
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) {
      throw IngestionError("row " + std::to_string(r) + ": expected " +
                           std::to_string(header.size()) + " fields, got " +
                           std::to_string(row.size()));
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      const ColumnSchema& s = schema[schema_pos[c]];
      auto& col = cols[schema_pos[c]];
      if (s.type == ColumnType::kCategorical) {
        std::get<std::vector<std::string>>(col).push_back(row[c]);
        continue;
      }
      const auto v = ParseNumber(row[c]);
      if (!v) {
        throw IngestionError("row " + std::to_string(r) + ", column '" +
                             s.name + "': not a number: '" + row[c] + "'");
      }
      if (*v < s.domain_min || *v > s.domain_max) {
        throw IngestionError("row " + std::to_string(r) + ", column '" +
                             s.name + "': value outside declared domain");
      }
      std::get<std::vector<double>>(col).push_back(*v);
    }
  }

  Dataset d;
  d.schema_ = schema;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    d.columns_.emplace(schema[i].name, std::move(cols[i]));
  }
  d.row_count_ = rows.size() - 1;
  d.content_hash_ = Sha256(bytes);
  return d;
}

// (domain_max - domain_min) / n: the most one modified entry can move a mean.
inline double SensitivityAverage(double domain_min, double domain_max,
                                 std::size_t n) {
  if (!(domain_max > domain_min)) {
    throw InvalidParameter("domain_max must exceed domain_min");
  }
  if (n == 0) throw InvalidParameter("row count must be positive");
  return (domain_max - domain_min) / static_cast<double>(n);
}

inline double SensitivityFrequency(std::size_t n) {
  if (n == 0) throw InvalidParameter("row count must be positive");
  return 1.0 / static_cast<double>(n);
}

enum class CompareOp { kEq, kNe, kLt, kLe, kGt, kGe };

inline std::optional<CompareOp> ParseCompareOp(std::string_view s) {
  if (s == "==") return CompareOp::kEq;
  if (s == "!=") return CompareOp::kNe;
  if (s == "<") return CompareOp::kLt;
  if (s == "<=") return CompareOp::kLe;
  if (s == ">") return CompareOp::kGt;
  if (s == ">=") return CompareOp::kGe;
  return std::nullopt;
}

inline std::string_view CompareOpText(CompareOp op) {
  switch (op) {
    case CompareOp::kEq: return "==";
    case CompareOp::kNe: return "!=";
    case CompareOp::kLt: return "<";
    case CompareOp::kLe: return "<=";
    case CompareOp::kGt: return ">";
    case CompareOp::kGe: return ">=";
  }
  return "?";
}

// `column op constant`. Categorical columns admit == and != against a string;
// numeric columns admit the four threshold comparisons against a number.
struct Predicate {
  std::string column;
  CompareOp op = CompareOp::kEq;
  std::variant<double, std::string> constant;
};

struct AverageOfColumn {
  std::string column;
  double domain_min = 0.0;
  double domain_max = 0.0;
};

struct FrequencyOfPredicate {
  Predicate predicate;
};

using QueryKind = std::variant<AverageOfColumn, FrequencyOfPredicate>;

struct QueryTypeSpec {
  std::string name;
  QueryKind kind;
  double sensitivity = 0.0;
};

namespace internal {

inline void CheckPredicate(const Dataset& d, const Predicate& p) {
  const ColumnSchema* col = d.FindColumn(p.column);
  if (!col) throw NotFound("unknown column '" + p.column + "'");
  const bool equality = p.op == CompareOp::kEq || p.op == CompareOp::kNe;
  if (col->type == ColumnType::kCategorical) {
    if (!equality || !std::holds_alternative<std::string>(p.constant)) {
      throw InvalidParameter("categorical column '" + p.column +
                             "' supports only == / != against a string");
    }
  } else if (equality || !std::holds_alternative<double>(p.constant)) {
    throw InvalidParameter("numeric column '" + p.column +
                           "' supports only <, <=, >, >= against a number");
  }
}

inline bool Compare(double lhs, CompareOp op, double rhs) {
  switch (op) {
    case CompareOp::kLt: return lhs < rhs;
    case CompareOp::kLe: return lhs <= rhs;
    case CompareOp::kGt: return lhs > rhs;
    case CompareOp::kGe: return lhs >= rhs;
    case CompareOp::kEq: return lhs == rhs;
    case CompareOp::kNe: return lhs != rhs;
  }
  return false;
}

}  // namespace internal

// Registers a query type against `d`, fixing its sensitivity. Averages take
// their domain from the column's declared domain.
inline QueryTypeSpec MakeQueryType(const Dataset& d, std::string name,
                                   QueryKind kind) {
  QueryTypeSpec spec{std::move(name), std::move(kind), 0.0};
  if (auto* avg = std::get_if<AverageOfColumn>(&spec.kind)) {
    const ColumnSchema* col = d.FindColumn(avg->column);
    if (!col) throw NotFound("unknown column '" + avg->column + "'");
    if (col->type != ColumnType::kNumeric) {
      throw InvalidParameter("cannot average categorical column '" +
                             avg->column + "'");
    }
    avg->domain_min = col->domain_min;
    avg->domain_max = col->domain_max;
    spec.sensitivity =
        SensitivityAverage(avg->domain_min, avg->domain_max, d.row_count());
  } else {
    internal::CheckPredicate(d, std::get<FrequencyOfPredicate>(spec.kind).predicate);
    spec.sensitivity = SensitivityFrequency(d.row_count());
  }
  return spec;
}

inline bool Matches(const Dataset& d, const Predicate& p, std::size_t row) {
  const ColumnSchema* col = d.FindColumn(p.column);
  if (col->type == ColumnType::kCategorical) {
    const bool eq = d.Categorical(p.column)[row] == std::get<std::string>(p.constant);
    return p.op == CompareOp::kEq ? eq : !eq;
  }
  return internal::Compare(d.Numeric(p.column)[row], p.op,
                           std::get<double>(p.constant));
}

// True (noise-free) answer of `spec` on `d`.
inline double Evaluate(const Dataset& d, const QueryTypeSpec& spec) {
  if (const auto* avg = std::get_if<AverageOfColumn>(&spec.kind)) {
    const auto& values = d.Numeric(avg->column);
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
  }
  const Predicate& p = std::get<FrequencyOfPredicate>(spec.kind).predicate;
  internal::CheckPredicate(d, p);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.row_count(); ++i) {
    if (Matches(d, p, i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(d.row_count());
}

// Pre-registered query types, in registration order.
class QueryRegistry {
 public:
  void Add(QueryTypeSpec spec) {
    if (Find(spec.name)) {
      throw InvalidParameter("duplicate query type '" + spec.name + "'");
    }
    specs_.push_back(std::move(spec));
  }

  const QueryTypeSpec* Find(std::string_view name) const {
    for (const QueryTypeSpec& s : specs_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  const std::vector<QueryTypeSpec>& specs() const { return specs_; }

  std::map<std::string, double, std::less<>> Sensitivities() const {
    std::map<std::string, double, std::less<>> out;
    for (const QueryTypeSpec& s : specs_) out[s.name] = s.sensitivity;
    return out;
  }

 private:
  std::vector<QueryTypeSpec> specs_;
};

}  // namespace dpledger
