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

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpledger/accountant.hpp"
#include "dpledger/dataset.hpp"
#include "dpledger/errors.hpp"
#include "dpledger/ledger.hpp"
#include "dpledger/service.hpp"

namespace dpledger {

// Malformed or inconsistent configuration file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QueryTypeConfig {
  std::string name;
  QueryKind kind;
};

struct ServiceConfig {
  std::filesystem::path dataset_csv;
  Schema schema;
  std::vector<QueryTypeConfig> query_types;
  double eps_budget = 0.0;
  double delta_budget = 0.0;
  std::filesystem::path ledger_path;
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string evaluator_url;  // empty: evaluate in-process
};

inline std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// "host:port" or ":port" or "port".
inline void ParseListen(const std::string& text, ServiceConfig& cfg) {
  const auto colon = text.rfind(':');
  std::string host = colon == std::string::npos ? "" : text.substr(0, colon);
  std::string port = colon == std::string::npos ? text : text.substr(colon + 1);
  const auto p = ParseNumber(port);
  if (!p || *p < 0 || *p > 65535 || *p != std::floor(*p)) {
    throw ConfigError("bad listen address '" + text + "'");
  }
  if (!host.empty()) cfg.listen_host = host;
  cfg.listen_port = static_cast<int>(*p);
}

inline Predicate PredicateFromJson(const nlohmann::json& j) {
  Predicate p;
  p.column = j.at("column").get<std::string>();
  const auto op = ParseCompareOp(j.at("op").get<std::string>());
  if (!op) throw ConfigError("unknown predicate operator");
  p.op = *op;
  const auto& v = j.at("value");
  if (v.is_number()) {
    p.constant = v.get<double>();
  } else {
    p.constant = v.get<std::string>();
  }
  return p;
}

// Parses a JSON service configuration. Relative paths resolve against
// `base_dir`. DPLEDGER_LISTEN and DPLEDGER_LEDGER override the file.
inline ServiceConfig ParseServiceConfig(const std::string& text,
                                        const std::filesystem::path& base_dir) {
  ServiceConfig cfg;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& ds = j.at("dataset");
    cfg.dataset_csv = base_dir / ds.at("csv").get<std::string>();
    for (const auto& c : ds.at("columns")) {
      ColumnSchema col;
      col.name = c.at("name").get<std::string>();
      const auto type = c.at("type").get<std::string>();
      if (type == "numeric") {
        col.type = ColumnType::kNumeric;
        const auto& dom = c.at("domain");
        col.domain_min = dom.at(0).get<double>();
        col.domain_max = dom.at(1).get<double>();
      } else if (type == "categorical") {
        col.type = ColumnType::kCategorical;
      } else {
        throw ConfigError("column '" + col.name + "': unknown type " + type);
      }
      cfg.schema.push_back(std::move(col));
    }
    for (const auto& q : j.at("query_types")) {
      QueryTypeConfig qt;
      qt.name = q.at("name").get<std::string>();
      if (q.contains("average")) {
        qt.kind = AverageOfColumn{q.at("average").get<std::string>(), 0, 0};
      } else if (q.contains("frequency")) {
        qt.kind = FrequencyOfPredicate{PredicateFromJson(q.at("frequency"))};
      } else {
        throw ConfigError("query type '" + qt.name +
                          "' needs 'average' or 'frequency'");
      }
      cfg.query_types.push_back(std::move(qt));
    }
    const auto& budget = j.at("budget");
    cfg.eps_budget = budget.at("epsilon").get<double>();
    cfg.delta_budget = budget.at("delta").get<double>();
    cfg.ledger_path = base_dir / j.value("ledger", std::string("ledger.jsonl"));
    if (j.contains("listen")) ParseListen(j.at("listen").get<std::string>(), cfg);
    if (j.contains("seed")) {
      cfg.seed = j.at("seed").get<std::uint64_t>();
      cfg.has_seed = true;
    }
    cfg.evaluator_url = j.value("evaluator_url", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (const char* listen = std::getenv("DPLEDGER_LISTEN"); listen && *listen) {
    ParseListen(listen, cfg);
  }
  if (const char* ledger = std::getenv("DPLEDGER_LEDGER"); ledger && *ledger) {
    cfg.ledger_path = ledger;
  }
  return cfg;
}

inline ServiceConfig LoadServiceConfig(const std::filesystem::path& path) {
  std::string text;
  try {
    text = ReadFile(path);
  } catch (const StorageError& e) {
    throw ConfigError(e.what());
  }
  return ParseServiceConfig(text, path.parent_path());
}

// Dataset plus its registered query types.
struct HostedDataset {
  Dataset dataset;
  QueryRegistry registry;
};

inline HostedDataset LoadHostedDataset(const ServiceConfig& cfg) {
  HostedDataset hosted{IngestCsv(ReadFile(cfg.dataset_csv), cfg.schema), {}};
  for (const QueryTypeConfig& q : cfg.query_types) {
    hosted.registry.Add(MakeQueryType(hosted.dataset, q.name, q.kind));
  }
  return hosted;
}

}  // namespace dpledger
