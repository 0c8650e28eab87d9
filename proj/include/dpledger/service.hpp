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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dpledger/accountant.hpp"
#include "dpledger/dataset.hpp"
#include "dpledger/dp_core.hpp"
#include "dpledger/errors.hpp"
#include "dpledger/ledger.hpp"
#include "dpledger/reuse_engine.hpp"

namespace dpledger {

// The dataset host could not be reached (or is disabled) for a case that
// needs a true value.
class ServerUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Source of true query values: the only component that touches the dataset.
class TrueValueSource {
 public:
  virtual ~TrueValueSource() = default;
  virtual double TrueValue(const QueryTypeSpec& spec) = 0;
};

class LocalEvaluator : public TrueValueSource {
 public:
  explicit LocalEvaluator(const Dataset& dataset) : dataset_(&dataset) {}
  double TrueValue(const QueryTypeSpec& spec) override {
    return Evaluate(*dataset_, spec);
  }

 private:
  const Dataset* dataset_;
};

// Refuses every request. Reuse cases that never read the dataset still work.
class DisabledEvaluator : public TrueValueSource {
 public:
  double TrueValue(const QueryTypeSpec& spec) override {
    throw ServerUnavailable("dataset evaluator disabled; cannot answer '" +
                            spec.name + "'");
  }
};

// Client-side request. Either (epsilon, delta) or a precomputed sigma must be
// given; when both are, they must agree within kSigmaEqualityTolerance.
struct QueryRequest {
  std::string query_type;
  std::optional<double> epsilon;
  std::optional<double> delta;
  std::optional<double> sigma;
};

struct QueryResponse {
  double noisy_value = 0.0;
  double sigma = 0.0;
  CaseTag case_tag;
  double eps_squared_cost = 0.0;
  double eps_squared_remaining = 0.0;
  std::uint64_t record_index = 0;
  bool server_accessed = false;
};

// Reuse applies the four-case rules; naive answers everything fresh and
// charges it as fresh (the comparison baseline).
enum class ReuseMode { kReuse, kNaive };

// Ticket lock: waiters enter in arrival order.
class FifoMutex {
 public:
  void lock() {
    std::unique_lock l(m_);
    const std::uint64_t ticket = next_++;
    cv_.wait(l, [&] { return serving_ == ticket; });
  }
  void unlock() {
    {
      std::lock_guard l(m_);
      ++serving_;
    }
    cv_.notify_all();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::uint64_t next_ = 0;
  std::uint64_t serving_ = 0;
};

// Sigma the client would compute for `req`, with epsilon/delta filled in.
// A sigma-only request is recorded with its equivalent epsilon at
// delta_budget.
struct ResolvedParams {
  NoiseScale sigma;
  PrivacyParams params;
};

inline ResolvedParams ResolveSigma(const QueryRequest& req, double sensitivity,
                                   double delta_budget) {
  const bool has_eps = req.epsilon.has_value();
  const bool has_delta = req.delta.has_value();
  if (has_eps != has_delta) {
    throw InvalidParameter("epsilon and delta must be supplied together");
  }
  if (has_eps) {
    const PrivacyParams p{*req.epsilon, *req.delta};
    const NoiseScale computed = GaussianSigma(sensitivity, p);
    if (req.sigma && !SameSigma(*req.sigma, computed.value())) {
      throw InvalidParameter("supplied sigma disagrees with (epsilon, delta)");
    }
    return {computed, p};
  }
  if (!req.sigma) {
    throw InvalidParameter("request needs (epsilon, delta) or sigma");
  }
  const NoiseScale s(*req.sigma);
  const double eps = std::sqrt(EpsilonSquaredCostFresh(sensitivity, s, delta_budget));
  return {s, {eps, delta_budget}};
}

struct ServiceOptions {
  ReuseMode mode = ReuseMode::kReuse;
  std::uint64_t seed = 0;
  std::function<std::int64_t()> clock;
};

inline std::int64_t WallClockMs() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Wires the client (sigma), ledger (classify, charge, record) and server (true
// values) roles for one dataset.
//
// The classify -> charge -> answer -> append sequence runs under one FIFO
// section. Budget is only committed after the record is durably appended, so
// any failure leaves both budget and ledger untouched; on restart the budget
// is replayed from the ledger.
class QueryService {
 public:
  QueryService(const QueryRegistry& registry, Digest dataset_hash,
               BudgetState initial_budget, Ledger& ledger,
               std::shared_ptr<TrueValueSource> server,
               ServiceOptions options = {})
      : registry_(&registry),
        sensitivities_(registry.Sensitivities()),
        dataset_hash_(dataset_hash),
        initial_budget_(initial_budget),
        ledger_(&ledger),
        server_(std::move(server)),
        mode_(options.mode),
        rng_(options.seed),
        clock_(options.clock ? std::move(options.clock) : WallClockMs) {
    const auto records = ledger_->Snapshot();
    if (auto verdict = VerifyRecords(records); !verdict.ok) {
      throw CorruptHistory("ledger fails verification at record " +
                           std::to_string(*verdict.first_bad_index));
    }
    budget_ = ReplayBudget(initial_budget_, records, dataset_hash_);
  }

  QueryResponse HandleQuery(const QueryRequest& req) {
    const QueryTypeSpec* spec = registry_->Find(req.query_type);
    if (!spec) throw NotFound("unknown query type '" + req.query_type + "'");
    const ResolvedParams resolved =
        ResolveSigma(req, spec->sensitivity, initial_budget_.delta_budget);
    const NoiseScale sigma = resolved.sigma;
    const double delta_budget = initial_budget_.delta_budget;

    std::lock_guard writer(writer_);
    const TypeHistory history = ledger_->HistoryFor(dataset_hash_, spec->name);
    CaseTag tag = mode_ == ReuseMode::kNaive
                      ? CaseTag{CaseKind::kFreshFirstTime, std::nullopt}
                      : Classify(sigma, history);

    const HistoryEntry* ref = nullptr;
    if (tag.ref) {
      for (const HistoryEntry& e : history) {
        if (e.record_index == *tag.ref) ref = &e;
      }
    }

    double cost = 0.0;
    if (tag.kind == CaseKind::kFreshFirstTime) {
      cost = EpsilonSquaredCostFresh(spec->sensitivity, sigma, delta_budget);
    } else if (tag.kind == CaseKind::kPartialReuse) {
      cost = EpsilonSquaredCostPartial(spec->sensitivity, sigma,
                                       NoiseScale(ref->sigma), delta_budget);
    }
    const BudgetState current = budget();
    const auto charged = TryCharge(current, cost);
    if (!charged) {
      throw InsufficientBudget(current.eps_squared_remaining, cost);
    }

    double noisy = 0.0;
    bool accessed = false;
    switch (tag.kind) {
      case CaseKind::kFreshFirstTime:
        noisy = AnswerFresh(ReadServer(*spec), sigma, rng_);
        accessed = true;
        break;
      case CaseKind::kExactReuse:
        noisy = AnswerExact(ref->noisy_value);
        break;
      case CaseKind::kPartialReuse:
        noisy = AnswerPartial(ReadServer(*spec), ref->noisy_value, sigma,
                              NoiseScale(ref->sigma), rng_);
        accessed = true;
        break;
      case CaseKind::kFullReuse:
        noisy = AnswerFull(ref->noisy_value, NoiseScale(ref->sigma), sigma, rng_);
        break;
    }

    NoiseRecord draft;
    draft.dataset_hash = dataset_hash_;
    draft.query_type = spec->name;
    draft.epsilon = resolved.params.epsilon;
    draft.delta = resolved.params.delta;
    draft.sigma = sigma.value();
    draft.noisy_response = noisy;
    draft.eps_squared_cost = cost;
    draft.case_tag = tag.kind;
    draft.reuse_ref = tag.ref;
    draft.timestamp_ms = clock_();
    const NoiseRecord sealed = ledger_->Append(std::move(draft));

    {
      std::lock_guard l(budget_mu_);
      budget_ = *charged;
    }
    return {noisy,        sigma.value(), tag, cost, charged->eps_squared_remaining,
            sealed.index, accessed};
  }

  BudgetState budget() const {
    std::lock_guard l(budget_mu_);
    return budget_;
  }

  std::vector<NoiseRecord> LedgerPage(std::size_t offset,
                                      std::size_t limit) const {
    return ledger_->Page(offset, limit);
  }

  ChainVerdict Verify() const { return ledger_->Verify(); }

  const QueryRegistry& registry() const { return *registry_; }

  SpendReport Report() const {
    const auto records = ledger_->Snapshot();
    if (mode_ == ReuseMode::kReuse) {
      return MakeSpendReport(records, sensitivities_, dataset_hash_,
                             initial_budget_.delta_budget);
    }
    // Naive ledgers repeat fresh releases, so there is no reuse chain to
    // replay: ours and naive coincide.
    SpendReport report;
    std::vector<NaiveTerm> terms;
    for (const NoiseRecord& r : records) {
      if (r.dataset_hash != dataset_hash_) continue;
      terms.push_back({sensitivities_.at(r.query_type), r.sigma});
      const double eps = EpsilonFromLossVariance(TotalLossVarianceNaive(terms),
                                                 initial_budget_.delta_budget);
      report.series.push_back(
          {r.index, r.query_type, r.case_tag, r.eps_squared_cost, eps, eps});
    }
    const LossVariance f = TotalLossVarianceNaive(terms);
    report.eps_ours = report.eps_naive =
        EpsilonFromLossVariance(f, initial_budget_.delta_budget);
    report.eps_squared_spent_ours = report.eps_squared_naive =
        report.eps_ours * report.eps_ours;
    return report;
  }

  const Digest& dataset_hash() const { return dataset_hash_; }
  std::uint64_t server_accesses() const { return server_accesses_.load(); }

 private:
  double ReadServer(const QueryTypeSpec& spec) {
    const double v = server_->TrueValue(spec);
    server_accesses_.fetch_add(1);
    return v;
  }

  const QueryRegistry* registry_;
  SensitivityMap sensitivities_;
  Digest dataset_hash_;
  BudgetState initial_budget_;
  Ledger* ledger_;
  std::shared_ptr<TrueValueSource> server_;
  ReuseMode mode_;
  Rng rng_;
  std::function<std::int64_t()> clock_;

  FifoMutex writer_;
  mutable std::mutex budget_mu_;
  BudgetState budget_;
  std::atomic<std::uint64_t> server_accesses_{0};
};

}  // namespace dpledger
