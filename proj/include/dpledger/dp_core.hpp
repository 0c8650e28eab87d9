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
#include <random>
#include <string>

#include <boost/math/special_functions/erf.hpp>

#include "dpledger/errors.hpp"

namespace dpledger {

// Generator used for every noise draw. Each caller owns its instance.
using Rng = std::mt19937_64;

// Relative band inside which two noise scales count as the same scale.
inline constexpr double kSigmaEqualityTolerance = 1e-9;

// Requested (epsilon, delta) for one query.
struct PrivacyParams {
  double epsilon = 0.0;
  double delta = 0.0;

  void Validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      throw InvalidParameter("epsilon must be positive and finite, got " +
                             std::to_string(epsilon));
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw InvalidParameter("delta must lie in (0, 1), got " +
                             std::to_string(delta));
    }
  }
};

// Standard deviation of additive Gaussian noise, in query-output units.
class NoiseScale {
 public:
  explicit NoiseScale(double sigma) : sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw InvalidParameter("noise scale must be positive and finite, got " +
                             std::to_string(sigma));
    }
  }

  double value() const { return sigma_; }
  double variance() const { return sigma_ * sigma_; }

  friend bool operator==(NoiseScale a, NoiseScale b) = default;

 private:
  double sigma_;
};

// Variance V of the privacy-loss Gaussian N(V/2, V). Zero means nothing has
// been released.
class LossVariance {
 public:
  LossVariance() = default;
  explicit LossVariance(double v) : v_(v) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidParameter("loss variance must be non-negative, got " +
                             std::to_string(v));
    }
  }

  double value() const { return v_; }

 private:
  double v_ = 0.0;
};

namespace internal {

inline void CheckDeltaBudget(double delta_budget) {
  if (!(delta_budget > 0.0 && delta_budget < 1.0)) {
    throw InvalidParameter("delta_budget must lie in (0, 1), got " +
                           std::to_string(delta_budget));
  }
}

inline void CheckSensitivity(double sensitivity) {
  if (!(sensitivity > 0.0) || !std::isfinite(sensitivity)) {
    throw InvalidParameter("sensitivity must be positive, got " +
                           std::to_string(sensitivity));
  }
}

// 2 ln(1.25 / delta): the squared multiplier in the Gaussian calibration.
inline double CalibrationFactor(double delta) {
  return 2.0 * std::log(1.25 / delta);
}

}  // namespace internal

// Noise scale that makes the Gaussian mechanism (epsilon, delta)-DP for a
// query of l2-sensitivity `sensitivity`:
//   sigma = sqrt(2 ln(1.25 / delta)) * sensitivity / epsilon.
inline NoiseScale GaussianSigma(double sensitivity, const PrivacyParams& params) {
  internal::CheckSensitivity(sensitivity);
  params.Validate();
  return NoiseScale(std::sqrt(internal::CalibrationFactor(params.delta)) *
                    sensitivity / params.epsilon);
}

// epsilon^2 charged for a fresh release at `sigma`, expressed at the fixed
// delta_budget. This is the cost c with GaussianSigma(sensitivity,
// {sqrt(c), delta_budget}) == sigma.
inline double EpsilonSquaredCostFresh(double sensitivity, NoiseScale sigma,
                                      double delta_budget) {
  internal::CheckSensitivity(sensitivity);
  internal::CheckDeltaBudget(delta_budget);
  return internal::CalibrationFactor(delta_budget) * sensitivity *
         sensitivity / sigma.variance();
}

// epsilon^2 charged for tightening an existing release from `sigma_min` down
// to `sigma`. Requires sigma < sigma_min.
inline double EpsilonSquaredCostPartial(double sensitivity, NoiseScale sigma,
                                        NoiseScale sigma_min,
                                        double delta_budget) {
  internal::CheckSensitivity(sensitivity);
  internal::CheckDeltaBudget(delta_budget);
  if (!(sigma.value() < sigma_min.value())) {
    throw PreconditionViolation(
        "partial reuse requires sigma below the smallest recorded sigma");
  }
  const double inverse_gap =
      1.0 / sigma.variance() - 1.0 / sigma_min.variance();
  return internal::CalibrationFactor(delta_budget) * sensitivity *
         sensitivity * inverse_gap;
}

// Epsilon reached by a privacy loss of variance `v` at delta_budget:
//   epsilon = sqrt(2 ln(1.25 / delta_budget) * V).
inline double EpsilonFromLossVariance(LossVariance v, double delta_budget) {
  internal::CheckDeltaBudget(delta_budget);
  return std::sqrt(internal::CalibrationFactor(delta_budget) * v.value());
}

// Half-width alpha with P(|N(0, sigma^2)| <= alpha) = 1 - beta.
inline double UtilityAlpha(NoiseScale sigma, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) {
    throw InvalidParameter("beta must lie in (0, 1), got " +
                           std::to_string(beta));
  }
  return sigma.value() * std::sqrt(2.0) * boost::math::erf_inv(1.0 - beta);
}

// Draw from N(mean, sigma^2). A zero sigma returns `mean` exactly and does not
// advance the generator.
inline double SampleGaussian(double mean, double sigma, Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidParameter("sigma must be non-negative, got " +
                           std::to_string(sigma));
  }
  if (sigma == 0.0) return mean;
  std::normal_distribution<double> standard(0.0, 1.0);
  return mean + sigma * standard(rng);
}

}  // namespace dpledger
