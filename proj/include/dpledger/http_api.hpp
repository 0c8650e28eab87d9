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

#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "dpledger/accountant.hpp"
#include "dpledger/dataset.hpp"
#include "dpledger/errors.hpp"
#include "dpledger/ledger.hpp"
#include "dpledger/service.hpp"

namespace dpledger {

using Json = nlohmann::ordered_json;

inline Json ToJson(const CaseTag& tag) {
  Json j;
  j["kind"] = CaseKindName(tag.kind);
  j["label"] = CaseKindLabel(tag.kind);
  j["ref"] = tag.ref ? Json(*tag.ref) : Json(nullptr);
  return j;
}

inline Json ToJson(const QueryResponse& r) {
  Json j;
  j["noisy_value"] = r.noisy_value;
  j["sigma"] = r.sigma;
  j["case_tag"] = ToJson(r.case_tag);
  j["eps_squared_cost"] = r.eps_squared_cost;
  j["eps_squared_remaining"] = r.eps_squared_remaining;
  j["record_index"] = r.record_index;
  j["server_accessed"] = r.server_accessed;
  return j;
}

inline Json ToJson(const BudgetState& b) {
  Json j;
  j["eps_squared_budget"] = b.eps_squared_budget;
  j["eps_squared_remaining"] = b.eps_squared_remaining;
  j["delta_budget"] = b.delta_budget;
  j["eps_remaining"] =
      EpsilonFromLossVariance(
          LossVariance(std::max(0.0, b.eps_squared_remaining) /
                       internal::CalibrationFactor(b.delta_budget)),
          b.delta_budget);
  return j;
}

inline Json ToJson(const ChainVerdict& v) {
  Json j;
  j["ok"] = v.ok;
  j["first_bad_index"] = v.first_bad_index ? Json(*v.first_bad_index) : Json(nullptr);
  return j;
}

inline Json ToJson(const SpendReport& r) {
  Json j;
  j["eps_squared_spent_ours"] = r.eps_squared_spent_ours;
  j["eps_ours"] = r.eps_ours;
  j["eps_squared_naive"] = r.eps_squared_naive;
  j["eps_naive"] = r.eps_naive;
  Json series = Json::array();
  for (const SpendPoint& p : r.series) {
    Json row;
    row["record_index"] = p.record_index;
    row["query_type"] = p.query_type;
    row["case_tag"] = CaseKindName(p.case_tag);
    row["eps_squared_cost"] = p.eps_squared_cost;
    row["cumulative_eps_ours"] = p.cumulative_eps_ours;
    row["cumulative_eps_naive"] = p.cumulative_eps_naive;
    series.push_back(std::move(row));
  }
  j["series"] = std::move(series);
  return j;
}

inline Json ToJson(const QueryTypeSpec& spec) {
  Json j;
  j["name"] = spec.name;
  j["sensitivity"] = spec.sensitivity;
  if (const auto* avg = std::get_if<AverageOfColumn>(&spec.kind)) {
    j["kind"] = "average";
    j["column"] = avg->column;
    j["domain"] = {avg->domain_min, avg->domain_max};
  } else {
    const Predicate& p = std::get<FrequencyOfPredicate>(spec.kind).predicate;
    j["kind"] = "frequency";
    j["column"] = p.column;
    j["op"] = CompareOpText(p.op);
    if (const auto* d = std::get_if<double>(&p.constant)) {
      j["value"] = *d;
    } else {
      j["value"] = std::get<std::string>(p.constant);
    }
  }
  return j;
}

inline Json ErrorBody(const std::string& code, const std::string& message,
                      std::optional<double> eps_squared_remaining = {}) {
  Json j;
  j["code"] = code;
  j["message"] = message;
  if (eps_squared_remaining) j["eps_squared_remaining"] = *eps_squared_remaining;
  return j;
}

namespace internal {

inline void Reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline std::optional<double> OptionalNumber(const nlohmann::json& j,
                                            const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) {
    throw InvalidParameter(std::string(key) + " must be a number");
  }
  return j.at(key).get<double>();
}

inline std::size_t QueryParam(const httplib::Request& req, const char* key,
                              std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto v = ParseNumber(req.get_param_value(key));
  if (!v || *v < 0 || *v != std::floor(*v)) {
    throw InvalidParameter(std::string(key) + " must be a non-negative integer");
  }
  return static_cast<std::size_t>(*v);
}

// Runs `fn` and turns library exceptions into the JSON error contract.
template <typename Fn>
void Guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const InsufficientBudget& e) {
    Reply(res, 409, ErrorBody("insufficient_budget", e.what(),
                              e.eps_squared_remaining()));
  } catch (const InvalidParameter& e) {
    Reply(res, 400, ErrorBody("invalid_parameter", e.what()));
  } catch (const nlohmann::json::exception& e) {
    Reply(res, 400, ErrorBody("invalid_parameter", e.what()));
  } catch (const NotFound& e) {
    Reply(res, 404, ErrorBody("not_found", e.what()));
  } catch (const ServerUnavailable& e) {
    Reply(res, 503, ErrorBody("server_unavailable", e.what()));
  } catch (const StorageError& e) {
    Reply(res, 500, ErrorBody("storage_error", e.what()));
  } catch (const std::exception& e) {
    Reply(res, 500, ErrorBody("internal_error", e.what()));
  }
}

}  // namespace internal

inline QueryRequest QueryRequestFromJson(const nlohmann::json& j) {
  QueryRequest req;
  if (!j.contains("query_type") || !j.at("query_type").is_string()) {
    throw InvalidParameter("query_type must be a string");
  }
  req.query_type = j.at("query_type").get<std::string>();
  req.epsilon = internal::OptionalNumber(j, "epsilon");
  req.delta = internal::OptionalNumber(j, "delta");
  req.sigma = internal::OptionalNumber(j, "sigma");
  return req;
}

// Mounts the JSON API on `server`:
//   POST /query, GET /budget, GET /ledger, GET /ledger/verify,
//   GET /query-types, GET /report.
inline void RegisterRoutes(httplib::Server& server, QueryService& service) {
  using internal::Guarded;
  using internal::Reply;
  server.Post("/query", [&service](const httplib::Request& req,
                                   httplib::Response& res) {
    Guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      Reply(res, 200, ToJson(service.HandleQuery(QueryRequestFromJson(body))));
    });
  });
  server.Get("/budget", [&service](const httplib::Request&,
                                   httplib::Response& res) {
    Guarded(res, [&] { Reply(res, 200, ToJson(service.budget())); });
  });
  server.Get("/ledger", [&service](const httplib::Request& req,
                                   httplib::Response& res) {
    Guarded(res, [&] {
      const std::size_t offset = internal::QueryParam(req, "offset", 0);
      const std::size_t limit = internal::QueryParam(req, "limit", 100);
      Json page = Json::array();
      for (const NoiseRecord& r : service.LedgerPage(offset, limit)) {
        page.push_back(RecordToJson(r));
      }
      Json j;
      j["offset"] = offset;
      j["records"] = std::move(page);
      Reply(res, 200, j);
    });
  });
  server.Get("/ledger/verify", [&service](const httplib::Request&,
                                          httplib::Response& res) {
    Guarded(res, [&] { Reply(res, 200, ToJson(service.Verify())); });
  });
  server.Get("/query-types", [&service](const httplib::Request&,
                                        httplib::Response& res) {
    Guarded(res, [&] {
      Json list = Json::array();
      for (const auto& spec : service.registry().specs()) {
        list.push_back(ToJson(spec));
      }
      Reply(res, 200, list);
    });
  });
  server.Get("/report", [&service](const httplib::Request&,
                                   httplib::Response& res) {
    Guarded(res, [&] { Reply(res, 200, ToJson(service.Report())); });
  });
}

// Dataset host endpoint for split deployments: GET /evaluate?query_type=NAME
// returns {"value": true_answer}.
inline void RegisterEvaluatorRoutes(httplib::Server& server,
                                    const Dataset& dataset,
                                    const QueryRegistry& registry) {
  server.Get("/evaluate", [&dataset, &registry](const httplib::Request& req,
                                                httplib::Response& res) {
    internal::Guarded(res, [&] {
      const QueryTypeSpec* spec =
          registry.Find(req.get_param_value("query_type"));
      if (!spec) throw NotFound("unknown query type");
      Json j;
      j["value"] = Evaluate(dataset, *spec);
      internal::Reply(res, 200, j);
    });
  });
}

// TrueValueSource backed by a remote /evaluate endpoint.
class HttpEvaluator : public TrueValueSource {
 public:
  explicit HttpEvaluator(const std::string& base_url) : client_(base_url) {
    client_.set_connection_timeout(5);
    client_.set_read_timeout(30);
  }

  double TrueValue(const QueryTypeSpec& spec) override {
    httplib::Params params{{"query_type", spec.name}};
    auto res = client_.Get("/evaluate", params, httplib::Headers{});
    if (!res || res->status != 200) {
      throw ServerUnavailable("dataset evaluator request failed for '" +
                              spec.name + "'");
    }
    return nlohmann::json::parse(res->body).at("value").get<double>();
  }

 private:
  httplib::Client client_;
};

}  // namespace dpledger
