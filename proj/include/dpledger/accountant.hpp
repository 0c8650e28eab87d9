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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpledger/dp_core.hpp"
#include "dpledger/errors.hpp"
#include "dpledger/ledger.hpp"
#include "dpledger/reuse_engine.hpp"

namespace dpledger {

// l2-sensitivity per registered query type name.
using SensitivityMap = std::map<std::string, double, std::less<>>;

// Budget in the epsilon^2 currency at a fixed delta_budget.
struct BudgetState {
  double eps_squared_budget = 0.0;
  double eps_squared_remaining = 0.0;
  double delta_budget = 0.0;

  static BudgetState FromEpsilon(double eps_budget, double delta_budget) {
    if (!(eps_budget >= 0.0) || !std::isfinite(eps_budget)) {
      throw InvalidParameter("eps_budget must be non-negative");
    }
    internal::CheckDeltaBudget(delta_budget);
    const double sq = eps_budget * eps_budget;
    return {sq, sq, delta_budget};
  }

  double eps_squared_spent() const {
    return eps_squared_budget - eps_squared_remaining;
  }

  friend bool operator==(const BudgetState&, const BudgetState&) = default;
};

// Check-then-commit: the charged state, or nullopt when `cost` would overdraw.
// The boundary remaining == cost is accepted.
inline std::optional<BudgetState> TryCharge(const BudgetState& state,
                                            double cost) {
  if (!(cost >= 0.0) || !std::isfinite(cost)) {
    throw InvalidParameter("cost must be non-negative, got " +
                           std::to_string(cost));
  }
  if (state.eps_squared_remaining - cost < 0.0) return std::nullopt;
  BudgetState next = state;
  next.eps_squared_remaining -= cost;
  return next;
}

// Budget after every charge recorded on `dataset_hash`. The ledger is the only
// source of truth for spent budget.
inline BudgetState ReplayBudget(const BudgetState& initial,
                                std::span<const NoiseRecord> records,
                                const Digest& dataset_hash) {
  BudgetState state = initial;
  for (const NoiseRecord& r : records) {
    if (r.dataset_hash != dataset_hash) continue;
    auto next = TryCharge(state, r.eps_squared_cost);
    if (!next) {
      throw CorruptHistory("record " + std::to_string(r.index) +
                           " overdraws the budget");
    }
    state = *next;
  }
  return state;
}

// Incremental replay of a ledger's case tags that tracks the worst-case
// privacy-loss variance G over neighboring datasets:
//   G = sum_{fresh i} D_i^2 / s_i^2
//     + sum_{types t with partial reuse} [D_t^2 / s_{t,last}^2 - D_t^2 / s_{t,root}^2]
// where s_{t,root} is the type's fresh release and s_{t,last} the newest
// (smallest) partial-reuse sigma. Records are validated as they arrive.
class LossReplay {
 public:
  LossReplay(const SensitivityMap& sensitivities, Digest dataset_hash)
      : sensitivities_(&sensitivities), dataset_hash_(dataset_hash) {}

  // Returns false if the record belongs to another dataset and was skipped.
  bool Add(const NoiseRecord& r) {
    if (r.dataset_hash != dataset_hash_) return false;
    const double sensitivity = SensitivityOf(r);
    TypeChain& chain = chains_[r.query_type];
    auto fail = [&](const std::string& why) {
      throw CorruptHistory("record " + std::to_string(r.index) + ": " + why);
    };
    if (!(r.sigma > 0.0)) fail("non-positive sigma");

    const SeenRecord* ref = nullptr;
    if (r.case_tag != CaseKind::kFreshFirstTime) {
      if (!r.reuse_ref) fail("reuse record without reuse_ref");
      auto it = seen_.find(*r.reuse_ref);
      if (it == seen_.end() || it->second.query_type != r.query_type) {
        fail("reuse_ref does not name an earlier record of the same type");
      }
      if (!chain.root_sigma) fail("reuse before any fresh release of the type");
      ref = &it->second;
    }

    switch (r.case_tag) {
      case CaseKind::kFreshFirstTime:
        if (r.reuse_ref) fail("fresh record carries a reuse_ref");
        if (chain.root_sigma) fail("second fresh release of the same type");
        chain.root_sigma = r.sigma;
        chain.min_sigma = r.sigma;
        chain.sensitivity = sensitivity;
        fresh_sum_ += sensitivity * sensitivity / (r.sigma * r.sigma);
        break;
      case CaseKind::kExactReuse:
        if (!SameSigma(ref->sigma, r.sigma)) fail("exact reuse with a different sigma");
        break;
      case CaseKind::kPartialReuse:
        if (!SameSigma(ref->sigma, chain.min_sigma)) {
          fail("partial reuse must reference the minimum-sigma release");
        }
        if (!(r.sigma < chain.min_sigma)) fail("partial reuse without tightening");
        chain.min_sigma = r.sigma;
        chain.last_partial_sigma = r.sigma;
        break;
      case CaseKind::kFullReuse:
        if (!(ref->sigma < r.sigma)) fail("full reuse of a release with sigma >= requested");
        break;
    }
    seen_[r.index] = {r.query_type, r.sigma};
    ++count_;
    naive_sum_ += sensitivity * sensitivity / (r.sigma * r.sigma);
    return true;
  }

  // Worst-case loss variance G of everything replayed so far.
  LossVariance Ours() const {
    double g = fresh_sum_;
    for (const auto& [type, chain] : chains_) {
      if (!chain.last_partial_sigma) continue;
      const double d2 = chain.sensitivity * chain.sensitivity;
      g += d2 / (*chain.last_partial_sigma * *chain.last_partial_sigma) -
           d2 / (*chain.root_sigma * *chain.root_sigma);
    }
    return LossVariance(std::max(0.0, g));
  }

  // Loss variance F had every replayed record been answered independently.
  LossVariance Naive() const { return LossVariance(naive_sum_); }

  std::size_t count() const { return count_; }

 private:
  struct TypeChain {
    std::optional<double> root_sigma;
    std::optional<double> last_partial_sigma;
    double min_sigma = 0.0;
    double sensitivity = 0.0;
  };
  struct SeenRecord {
    std::string query_type;
    double sigma = 0.0;
  };

  double SensitivityOf(const NoiseRecord& r) const {
    auto it = sensitivities_->find(r.query_type);
    if (it == sensitivities_->end()) {
      throw CorruptHistory("record " + std::to_string(r.index) +
                           ": unregistered query type " + r.query_type);
    }
    return it->second;
  }

  const SensitivityMap* sensitivities_;
  Digest dataset_hash_;
  std::map<std::string, TypeChain, std::less<>> chains_;
  std::unordered_map<std::uint64_t, SeenRecord> seen_;
  double fresh_sum_ = 0.0;
  double naive_sum_ = 0.0;
  std::size_t count_ = 0;
};

// G over the records of one dataset, recomputed from case tags alone.
inline LossVariance TotalLossVarianceOurs(std::span<const NoiseRecord> records,
                                          const SensitivityMap& sensitivities,
                                          const Digest& dataset_hash) {
  LossReplay replay(sensitivities, dataset_hash);
  for (const NoiseRecord& r : records) replay.Add(r);
  return replay.Ours();
}

struct NaiveTerm {
  double sensitivity = 0.0;
  double sigma = 0.0;
};

// F = sum_i D_i^2 / s_i^2 for queries all answered with fresh noise.
inline LossVariance TotalLossVarianceNaive(std::span<const NaiveTerm> terms) {
  double f = 0.0;
  for (const NaiveTerm& t : terms) {
    if (!(t.sigma > 0.0)) throw InvalidParameter("sigma must be positive");
    f += t.sensitivity * t.sensitivity / (t.sigma * t.sigma);
  }
  return LossVariance(f);
}

struct SpendPoint {
  std::uint64_t record_index = 0;
  std::string query_type;
  CaseKind case_tag = CaseKind::kFreshFirstTime;
  double eps_squared_cost = 0.0;
  double cumulative_eps_ours = 0.0;
  double cumulative_eps_naive = 0.0;
};

struct SpendReport {
  double eps_squared_spent_ours = 0.0;
  double eps_ours = 0.0;
  double eps_squared_naive = 0.0;
  double eps_naive = 0.0;
  std::vector<SpendPoint> series;
};

inline SpendReport MakeSpendReport(std::span<const NoiseRecord> records,
                                   const SensitivityMap& sensitivities,
                                   const Digest& dataset_hash,
                                   double delta_budget) {
  internal::CheckDeltaBudget(delta_budget);
  const double factor = internal::CalibrationFactor(delta_budget);
  LossReplay replay(sensitivities, dataset_hash);
  SpendReport report;
  for (const NoiseRecord& r : records) {
    if (!replay.Add(r)) continue;
    report.series.push_back(
        {r.index, r.query_type, r.case_tag, r.eps_squared_cost,
         EpsilonFromLossVariance(replay.Ours(), delta_budget),
         EpsilonFromLossVariance(replay.Naive(), delta_budget)});
  }
  report.eps_squared_spent_ours = factor * replay.Ours().value();
  report.eps_ours = EpsilonFromLossVariance(replay.Ours(), delta_budget);
  report.eps_squared_naive = factor * replay.Naive().value();
  report.eps_naive = EpsilonFromLossVariance(replay.Naive(), delta_budget);
  return report;
}

}  // namespace dpledger
