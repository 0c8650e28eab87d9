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
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dpledger/config.hpp"
#include "dpledger/dataset.hpp"
#include "dpledger/dp_core.hpp"
#include "dpledger/ledger.hpp"
#include "dpledger/service.hpp"

namespace dpledger {

// Floor on |true value| in the relative-error denominator.
inline constexpr double kRelativeErrorFloor = 1e-9;

struct SimConfig {
  // Empty means uniform over every registered query type.
  std::vector<std::pair<std::string, double>> query_type_weights;
  double epsilon_low = 0.1;
  double epsilon_high = 1.1;
  double delta_low = 1e-5;
  double delta_high = 1e-4;
  int num_queries = 150;
  std::uint64_t seed = 1;
  double eps_budget = 8.0;
  double delta_budget = 1e-4;

  void Validate() const {
    if (!(epsilon_low > 0.0 && epsilon_high >= epsilon_low)) {
      throw InvalidParameter("epsilon_range must satisfy 0 < low <= high");
    }
    if (!(delta_low > 0.0 && delta_high >= delta_low && delta_high < 1.0)) {
      throw InvalidParameter("delta_range must satisfy 0 < low <= high < 1");
    }
    if (num_queries < 1) throw InvalidParameter("num_queries must be >= 1");
    for (const auto& [name, w] : query_type_weights) {
      if (!(w >= 0.0)) throw InvalidParameter("negative weight for " + name);
    }
    BudgetState::FromEpsilon(eps_budget, delta_budget);
  }
};

// Reads the optional "simulation" object and the "budget" object of a
// service-style config.
inline SimConfig ParseSimConfig(const std::string& text) {
  SimConfig cfg;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("budget")) {
      cfg.eps_budget = j.at("budget").at("epsilon").get<double>();
      cfg.delta_budget = j.at("budget").at("delta").get<double>();
    }
    if (j.contains("simulation")) {
      const auto& s = j.at("simulation");
      if (s.contains("epsilon_range")) {
        cfg.epsilon_low = s.at("epsilon_range").at(0).get<double>();
        cfg.epsilon_high = s.at("epsilon_range").at(1).get<double>();
      }
      if (s.contains("delta_range")) {
        cfg.delta_low = s.at("delta_range").at(0).get<double>();
        cfg.delta_high = s.at("delta_range").at(1).get<double>();
      }
      cfg.num_queries = s.value("num_queries", cfg.num_queries);
      cfg.seed = s.value("seed", cfg.seed);
      if (s.contains("query_type_weights")) {
        for (const auto& [name, w] : s.at("query_type_weights").items()) {
          cfg.query_type_weights.emplace_back(name, w.get<double>());
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

struct SimRow {
  int index = 0;  // 1-based position in the stream
  std::string query_type;
  double epsilon = 0.0;
  double delta = 0.0;
  double sigma = 0.0;
  CaseKind case_tag = CaseKind::kFreshFirstTime;
  double cumulative_eps_squared_ours = 0.0;
  double cumulative_eps_ours = 0.0;
  double cumulative_eps_naive = 0.0;
  double relative_error_ours = 0.0;
  double relative_error_naive = 0.0;
  bool ours_over_budget = false;
  bool naive_over_budget = false;
};

struct SimRun {
  std::uint64_t seed = 0;
  std::vector<SimRow> rows;
  double relative_error_sum_ours = 0.0;
  double relative_error_sum_naive = 0.0;

  double final_eps_ours() const { return rows.back().cumulative_eps_ours; }
  double final_eps_naive() const { return rows.back().cumulative_eps_naive; }
};

struct SampledQuery {
  const QueryTypeSpec* spec = nullptr;
  double epsilon = 0.0;
  double delta = 0.0;
};

inline std::vector<SampledQuery> SampleQueryStream(const QueryRegistry& registry,
                                                   const SimConfig& cfg,
                                                   std::uint64_t seed) {
  std::vector<const QueryTypeSpec*> types;
  std::vector<double> weights;
  if (cfg.query_type_weights.empty()) {
    for (const auto& s : registry.specs()) {
      types.push_back(&s);
      weights.push_back(1.0);
    }
  } else {
    for (const auto& [name, w] : cfg.query_type_weights) {
      const QueryTypeSpec* s = registry.Find(name);
      if (!s) throw NotFound("simulation weight for unknown type '" + name + "'");
      types.push_back(s);
      weights.push_back(w);
    }
  }
  if (types.empty()) throw InvalidParameter("no query types to sample");

  Rng rng(seed);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> eps(cfg.epsilon_low, cfg.epsilon_high);
  std::uniform_real_distribution<double> delta(cfg.delta_low, cfg.delta_high);
  std::vector<SampledQuery> stream;
  stream.reserve(static_cast<std::size_t>(cfg.num_queries));
  for (int i = 0; i < cfg.num_queries; ++i) {
    const QueryTypeSpec* t = types[pick(rng)];
    const double e = eps(rng);
    const double d = delta(rng);
    stream.push_back({t, e, d});
  }
  return stream;
}

// Runs one sampled stream through two in-memory services, one reusing noise
// and one answering every query fresh. Both consume the same (type, epsilon,
// delta) stream and the same noise seed. Budgets are not enforced so curves
// stay complete; crossing the configured budget is flagged per row instead.
inline SimRun RunSimulation(const HostedDataset& hosted, const SimConfig& cfg,
                            std::uint64_t seed) {
  cfg.Validate();
  const auto stream = SampleQueryStream(hosted.registry, cfg, seed);
  const double budget_sq = cfg.eps_budget * cfg.eps_budget;
  const BudgetState unlimited{std::numeric_limits<double>::max(),
                              std::numeric_limits<double>::max(),
                              cfg.delta_budget};
  const std::uint64_t noise_seed = seed * 0x9E3779B97F4A7C15ULL + 1;

  Ledger ours_ledger;
  Ledger naive_ledger;
  auto server = std::make_shared<LocalEvaluator>(hosted.dataset);
  auto fixed_clock = [] { return std::int64_t{0}; };
  QueryService ours(hosted.registry, hosted.dataset.content_hash(), unlimited,
                    ours_ledger, server,
                    {ReuseMode::kReuse, noise_seed, fixed_clock});
  QueryService naive(hosted.registry, hosted.dataset.content_hash(), unlimited,
                     naive_ledger, server,
                     {ReuseMode::kNaive, noise_seed, fixed_clock});

  SimRun run;
  run.seed = seed;
  double spent_ours = 0.0;
  double spent_naive = 0.0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const SampledQuery& q = stream[i];
    const QueryRequest req{q.spec->name, q.epsilon, q.delta, std::nullopt};
    const QueryResponse a = ours.HandleQuery(req);
    const QueryResponse b = naive.HandleQuery(req);
    spent_ours += a.eps_squared_cost;
    spent_naive += b.eps_squared_cost;

    const double truth = Evaluate(hosted.dataset, *q.spec);
    const double denom = std::max(std::abs(truth), kRelativeErrorFloor);
    SimRow row;
    row.index = static_cast<int>(i) + 1;
    row.query_type = q.spec->name;
    row.epsilon = q.epsilon;
    row.delta = q.delta;
    row.sigma = a.sigma;
    row.case_tag = a.case_tag.kind;
    row.cumulative_eps_squared_ours = spent_ours;
    row.cumulative_eps_ours = std::sqrt(spent_ours);
    row.cumulative_eps_naive = std::sqrt(spent_naive);
    row.relative_error_ours = std::abs(a.noisy_value - truth) / denom;
    row.relative_error_naive = std::abs(b.noisy_value - truth) / denom;
    row.ours_over_budget = spent_ours > budget_sq;
    row.naive_over_budget = spent_naive > budget_sq;
    run.relative_error_sum_ours += row.relative_error_ours;
    run.relative_error_sum_naive += row.relative_error_naive;
    run.rows.push_back(std::move(row));
  }
  return run;
}

inline std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void WriteSimulationCsv(std::ostream& out, std::span<const SimRun> runs) {
  out << "# relative_error = |noisy - true| / max(|true|, "
      << FormatDouble(kRelativeErrorFloor) << ")\n";
  out << "run,seed,index,query_type,epsilon,delta,sigma,case,"
         "cumulative_eps_squared_ours,cumulative_eps_ours,cumulative_eps_naive,"
         "relative_error_ours,relative_error_naive,ours_over_budget,"
         "naive_over_budget\n";
  for (std::size_t k = 0; k < runs.size(); ++k) {
    for (const SimRow& r : runs[k].rows) {
      out << k << ',' << runs[k].seed << ',' << r.index << ','
          << CsvField(r.query_type) << ',' << FormatDouble(r.epsilon) << ','
          << FormatDouble(r.delta) << ',' << FormatDouble(r.sigma) << ','
          << CaseKindLabel(r.case_tag) << ','
          << FormatDouble(r.cumulative_eps_squared_ours) << ','
          << FormatDouble(r.cumulative_eps_ours) << ','
          << FormatDouble(r.cumulative_eps_naive) << ','
          << FormatDouble(r.relative_error_ours) << ','
          << FormatDouble(r.relative_error_naive) << ','
          << (r.ours_over_budget ? 1 : 0) << ','
          << (r.naive_over_budget ? 1 : 0) << '\n';
    }
  }
}

// Savings of the reuse scheme at the end of a run: 1 - eps_ours / eps_naive.
inline double FinalSavings(const SimRun& run) {
  return 1.0 - run.final_eps_ours() / run.final_eps_naive();
}

struct UtilityRow {
  double epsilon = 0.0;
  std::vector<double> sigma;  // per query type, registry order
  std::vector<double> alpha;  // 2 sigma: the ~95% error half-width
};

// Noise scale and 2-sigma error bound per query type over `steps` evenly
// spaced epsilons in [eps_low, eps_high] at a fixed delta.
inline std::vector<UtilityRow> UtilitySweep(std::span<const QueryTypeSpec> types,
                                            double delta, double eps_low,
                                            double eps_high, int steps) {
  if (!(eps_low > 0.0 && eps_high > eps_low) || steps < 2) {
    throw InvalidParameter("utility sweep needs 0 < eps_low < eps_high, steps >= 2");
  }
  std::vector<UtilityRow> rows;
  for (int i = 0; i < steps; ++i) {
    UtilityRow row;
    row.epsilon = eps_low + (eps_high - eps_low) * i / (steps - 1);
    for (const QueryTypeSpec& t : types) {
      const double s = GaussianSigma(t.sensitivity, {row.epsilon, delta}).value();
      row.sigma.push_back(s);
      row.alpha.push_back(2.0 * s);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void WriteUtilityCsv(std::ostream& out,
                            std::span<const QueryTypeSpec> types,
                            std::span<const UtilityRow> rows) {
  out << "epsilon";
  for (const auto& t : types) out << ',' << CsvField("sigma:" + t.name);
  for (const auto& t : types) out << ',' << CsvField("alpha:" + t.name);
  out << '\n';
  for (const UtilityRow& r : rows) {
    out << FormatDouble(r.epsilon);
    for (double s : r.sigma) out << ',' << FormatDouble(s);
    for (double a : r.alpha) out << ',' << FormatDouble(a);
    out << '\n';
  }
}

// Survey-shaped synthetic table with the columns of the public-use census
// extract the demo configuration expects. Deterministic per seed.
inline std::string SyntheticSurveyCsv(std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  std::lognormal_distribution<double> income(10.4, 1.0);
  std::normal_distribution<double> extra(0.0, 1.0);
  std::uniform_int_distribution<int> age(18, 94);
  std::discrete_distribution<int> race({0.72, 0.13, 0.06, 0.09});
  std::bernoulli_distribution citizen(0.93);
  std::bernoulli_distribution negative(0.01);
  static constexpr const char* kRace[] = {"White", "Black", "Asian", "Other"};

  std::string out =
      "total_personal_income,total_family_income,age,race,citizenship\n";
  for (std::size_t i = 0; i < rows; ++i) {
    double personal = std::min(700000.0, std::round(income(rng)));
    if (negative(rng)) personal = -std::round(5000.0 * std::abs(extra(rng)) / 3.0);
    personal = std::max(-5000.0, personal);
    double family = personal + std::round(std::max(0.0, income(rng) - 20000.0));
    family = std::clamp(family, -5000.0, 1379500.0);
    out += FormatDouble(personal) + ',' + FormatDouble(family) + ',' +
           std::to_string(age(rng)) + ',' + kRace[race(rng)] + ',' +
           (citizen(rng) ? "US citizen" : "Not a citizen") + '\n';
  }
  return out;
}

}  // namespace dpledger
