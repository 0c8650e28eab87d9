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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpledger/dp_core.hpp"
#include "dpledger/errors.hpp"

namespace dpledger {

// How a query was answered relative to earlier releases of the same type on
// the same dataset.
enum class CaseKind {
  kFreshFirstTime,  // no earlier release: answered from the dataset
  kExactReuse,      // an earlier release used the same sigma: returned as-is
  kPartialReuse,    // sigma below every earlier sigma: reuse a fraction
  kFullReuse,       // top up the largest smaller-sigma release with noise
};

inline std::string_view CaseKindName(CaseKind kind) {
  switch (kind) {
    case CaseKind::kFreshFirstTime:
      return "FreshFirstTime";
    case CaseKind::kExactReuse:
      return "ExactReuse";
    case CaseKind::kPartialReuse:
      return "PartialReuse";
    case CaseKind::kFullReuse:
      return "FullReuse";
  }
  return "?";
}

// Short label matching the conventional case numbering (1, 2A, 2B, 2C).
inline std::string_view CaseKindLabel(CaseKind kind) {
  switch (kind) {
    case CaseKind::kFreshFirstTime:
      return "1";
    case CaseKind::kExactReuse:
      return "2A";
    case CaseKind::kPartialReuse:
      return "2B";
    case CaseKind::kFullReuse:
      return "2C";
  }
  return "?";
}

inline std::optional<CaseKind> ParseCaseKind(std::string_view name) {
  for (CaseKind k : {CaseKind::kFreshFirstTime, CaseKind::kExactReuse,
                     CaseKind::kPartialReuse, CaseKind::kFullReuse}) {
    if (name == CaseKindName(k)) return k;
  }
  return std::nullopt;
}

// Whether answering this case needs the true query value from the dataset.
inline bool NeedsDatasetAccess(CaseKind kind) {
  return kind == CaseKind::kFreshFirstTime || kind == CaseKind::kPartialReuse;
}

struct CaseTag {
  CaseKind kind = CaseKind::kFreshFirstTime;
  // Ledger index of the reused record; absent for kFreshFirstTime.
  std::optional<std::uint64_t> ref;

  friend bool operator==(const CaseTag&, const CaseTag&) = default;
};

// One earlier release of a (dataset, query type) pair.
struct HistoryEntry {
  double sigma = 0.0;
  double noisy_value = 0.0;
  std::uint64_t record_index = 0;
};

// Every earlier release of one (dataset, query type) pair, in append order.
using TypeHistory = std::vector<HistoryEntry>;

inline bool SameSigma(double a, double b) {
  return std::abs(a - b) <= kSigmaEqualityTolerance * b;
}

// Decides which reuse rule applies to a new request at `sigma`.
//
// Exact matches (within kSigmaEqualityTolerance, relative to the requested
// sigma) win first and resolve to the earliest such record. Otherwise a sigma
// strictly below the whole history reuses the minimum-sigma record, and
// anything else tops up the largest recorded sigma below the request. Ties in
// the last two cases go to the most recent record; tied records carry the
// same noisy value since only exact reuse can repeat a sigma.
inline CaseTag Classify(NoiseScale sigma, std::span<const HistoryEntry> history) {
  if (history.empty()) return {CaseKind::kFreshFirstTime, std::nullopt};

  const double s = sigma.value();
  for (const HistoryEntry& e : history) {
    if (SameSigma(e.sigma, s)) return {CaseKind::kExactReuse, e.record_index};
  }

  const HistoryEntry* smallest = &history.front();
  const HistoryEntry* largest_below = nullptr;
  for (const HistoryEntry& e : history) {
    if (e.sigma <= smallest->sigma) smallest = &e;
    if (e.sigma < s && (largest_below == nullptr ||
                        e.sigma >= largest_below->sigma)) {
      largest_below = &e;
    }
  }
  if (s < smallest->sigma) {
    return {CaseKind::kPartialReuse, smallest->record_index};
  }
  return {CaseKind::kFullReuse, largest_below->record_index};
}

// Fraction of an earlier release's noise to carry into a new release that
// minimizes the added privacy loss: 1 when the new sigma is at least the old
// one, (sigma_new / sigma_old)^2 otherwise.
inline double OptimalReuseRatio(NoiseScale sigma_new, NoiseScale sigma_old) {
  if (sigma_new.value() >= sigma_old.value()) return 1.0;
  const double ratio = sigma_new.value() / sigma_old.value();
  return ratio * ratio;
}

// Case 1: true value plus N(0, sigma^2).
inline double AnswerFresh(double true_value, NoiseScale sigma, Rng& rng) {
  return SampleGaussian(true_value, sigma.value(), rng);
}

// Exact reuse returns the stored release untouched.
inline double AnswerExact(double previous_noisy) { return previous_noisy; }

// Partial reuse of the minimum-sigma release `previous_noisy` (recorded at
// `sigma_min`). With r = sigma^2 / sigma_min^2 the result is
//   true + r * (previous - true) + N(0, sigma^2 - sigma^4 / sigma_min^2),
// whose error is N(0, sigma^2) when the previous error was N(0, sigma_min^2).
inline double AnswerPartial(double true_value, double previous_noisy,
                            NoiseScale sigma, NoiseScale sigma_min, Rng& rng) {
  if (!(sigma.value() < sigma_min.value())) {
    throw PreconditionViolation("partial reuse requires sigma < sigma_min");
  }
  const double r = OptimalReuseRatio(sigma, sigma_min);
  const double extra_variance =
      std::max(0.0, sigma.variance() - r * r * sigma_min.variance());
  return true_value + r * (previous_noisy - true_value) +
         SampleGaussian(0.0, std::sqrt(extra_variance), rng);
}

// Full reuse: top up a release made at `sigma_lower` < sigma with independent
// noise of variance sigma^2 - sigma_lower^2. Never touches the dataset.
inline double AnswerFull(double previous_noisy, NoiseScale sigma_lower,
                         NoiseScale sigma, Rng& rng) {
  if (!(sigma_lower.value() < sigma.value())) {
    throw PreconditionViolation("full reuse requires sigma_lower < sigma");
  }
  return SampleGaussian(
      previous_noisy, std::sqrt(sigma.variance() - sigma_lower.variance()), rng);
}

}  // namespace dpledger
