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
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpledger/accountant.hpp"
#include "dpledger/dataset.hpp"
#include "dpledger/ledger.hpp"
#include "dpledger/reuse_engine.hpp"

namespace dpledger {

// Relative tolerance for comparing a stored cost with its re-derivation.
inline constexpr double kAuditTolerance = 1e-9;

struct AuditReport {
  ChainVerdict chain;
  bool accounting_ok = true;
  double charged_eps_squared = 0.0;
  double recomputed_eps_squared = 0.0;
  std::vector<std::string> problems;

  bool ok() const { return chain.ok && accounting_ok && problems.empty(); }
};

inline bool CloseRelative(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

// Full audit of one dataset's ledger: hash chain, per-record re-classification
// and cost re-derivation, and the telescoping identity
//   sum of charged costs == 2 ln(1.25 / delta_budget) * G
// with G recomputed from case tags alone.
inline AuditReport AuditLedger(std::span<const NoiseRecord> records,
                               const SensitivityMap& sensitivities,
                               const Digest& dataset_hash,
                               const BudgetState& initial) {
  AuditReport report;
  report.chain = VerifyRecords(records);
  if (!report.chain.ok) {
    report.problems.push_back("hash chain broken at record " +
                              std::to_string(*report.chain.first_bad_index));
    return report;
  }

  std::map<std::string, TypeHistory, std::less<>> histories;
  for (const NoiseRecord& r : records) {
    if (r.dataset_hash != dataset_hash) continue;
    const std::string where = "record " + std::to_string(r.index) + ": ";
    auto sens = sensitivities.find(r.query_type);
    if (sens == sensitivities.end()) {
      report.problems.push_back(where + "unregistered query type");
      continue;
    }
    TypeHistory& history = histories[r.query_type];
    if (!(r.sigma > 0.0)) {
      report.problems.push_back(where + "non-positive sigma");
      continue;
    }
    const NoiseScale sigma(r.sigma);
    const CaseTag expected = Classify(sigma, history);
    if (expected != r.tag()) {
      report.problems.push_back(where + "case tag " +
                                std::string(CaseKindName(r.case_tag)) +
                                " but replay gives " +
                                std::string(CaseKindName(expected.kind)));
    } else {
      double cost = 0.0;
      if (expected.kind == CaseKind::kFreshFirstTime) {
        cost = EpsilonSquaredCostFresh(sens->second, sigma, initial.delta_budget);
      } else if (expected.kind == CaseKind::kPartialReuse) {
        double ref_sigma = 0.0;
        for (const HistoryEntry& e : history) {
          if (e.record_index == *expected.ref) ref_sigma = e.sigma;
        }
        cost = EpsilonSquaredCostPartial(sens->second, sigma,
                                         NoiseScale(ref_sigma),
                                         initial.delta_budget);
      }
      if (!CloseRelative(cost, r.eps_squared_cost, kAuditTolerance)) {
        report.problems.push_back(where + "charged " +
                                  std::to_string(r.eps_squared_cost) +
                                  " but the case implies " +
                                  std::to_string(cost));
      }
    }
    history.push_back({r.sigma, r.noisy_response, r.index});
    report.charged_eps_squared += r.eps_squared_cost;
  }

  try {
    const LossVariance g =
        TotalLossVarianceOurs(records, sensitivities, dataset_hash);
    report.recomputed_eps_squared =
        internal::CalibrationFactor(initial.delta_budget) * g.value();
  } catch (const CorruptHistory& e) {
    report.problems.push_back(e.what());
    report.accounting_ok = false;
    return report;
  }
  report.accounting_ok =
      CloseRelative(report.charged_eps_squared, report.recomputed_eps_squared,
                    kAuditTolerance);
  if (report.charged_eps_squared > initial.eps_squared_budget) {
    report.problems.push_back("charged total exceeds the budget");
  }
  return report;
}

}  // namespace dpledger
