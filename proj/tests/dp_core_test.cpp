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

#include "dpledger/dp_core.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

namespace dpledger {
namespace {

// Reference values from a 30-digit evaluation of the closed forms.
constexpr double kSigmaUnitDelta1e5 = 4.84480526260538942;
constexpr double kSigma202Delta1e4 = 877.409685387551640;
constexpr double kTwoLn12500 = 18.8669678465807850;
constexpr double kPartialExample = 14.1502258849355887;
constexpr double kEpsAtUnitVariance = 4.34361230389877050;
constexpr double kAlphaBeta005 = 1.95996398454005424;
constexpr double kAlphaOneSigma = 1.00002171332299916;

// Independent inverse error function: Newton iterations on std::erf.
double ErfInvOracle(double y) {
  double x = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double step = (std::erf(x) - y) / (2.0 / std::sqrt(M_PI) * std::exp(-x * x));
    x -= step;
    if (std::abs(step) < 1e-17) break;
  }
  return x;
}

TEST(GaussianSigmaTest, MatchesReferenceValues) {
  EXPECT_NEAR(GaussianSigma(1.0, {1.0, 1e-5}).value(), kSigmaUnitDelta1e5, 1e-12);
  EXPECT_NEAR(GaussianSigma(202.0, {1.0, 1e-4}).value(), kSigma202Delta1e4, 1e-9);
}

TEST(GaussianSigmaTest, LinearInSensitivity) {
  const PrivacyParams p{0.7, 3e-5};
  EXPECT_DOUBLE_EQ(GaussianSigma(2.0 * 3.3, p).value(),
                   2.0 * GaussianSigma(3.3, p).value());
}

TEST(GaussianSigmaTest, RejectsInvalidParameters) {
  EXPECT_THROW(GaussianSigma(0.0, {1.0, 1e-5}), InvalidParameter);
  EXPECT_THROW(GaussianSigma(-1.0, {1.0, 1e-5}), InvalidParameter);
  EXPECT_THROW(GaussianSigma(1.0, {0.0, 1e-5}), InvalidParameter);
  EXPECT_THROW(GaussianSigma(1.0, {1.0, 0.0}), InvalidParameter);
  EXPECT_THROW(GaussianSigma(1.0, {1.0, 1.0}), InvalidParameter);
  EXPECT_THROW(GaussianSigma(1.0, {1.0, 1.2}), InvalidParameter);
}

TEST(CostFreshTest, ReferenceAndLimits) {
  EXPECT_NEAR(EpsilonSquaredCostFresh(1.0, NoiseScale(1.0), 1e-4), kTwoLn12500, 1e-12);
  EXPECT_LT(EpsilonSquaredCostFresh(1.0, NoiseScale(1e12), 1e-4), 1e-22);
  EXPECT_THROW(EpsilonSquaredCostFresh(1.0, NoiseScale(1.0), 0.0), InvalidParameter);
  EXPECT_THROW(NoiseScale(0.0), InvalidParameter);
}

TEST(CostFreshTest, InvertsCalibration) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> sens(1e-4, 500.0);
  std::uniform_real_distribution<double> eps(0.05, 5.0);
  std::uniform_real_distribution<double> log_delta(std::log(1e-9), std::log(0.5));
  for (int i = 0; i < 1000; ++i) {
    const double d = sens(rng);
    const double delta = std::exp(log_delta(rng));
    const NoiseScale sigma = GaussianSigma(d, {eps(rng), delta});
    const double cost = EpsilonSquaredCostFresh(d, sigma, delta);
    const double back = GaussianSigma(d, {std::sqrt(cost), delta}).value();
    EXPECT_LT(std::abs(back - sigma.value()) / sigma.value(), 1e-12);
  }
}

TEST(CostFreshTest, StrictlyDecreasingInSigma) {
  double prev = INFINITY;
  for (double s = 0.1; s < 50.0; s *= 1.3) {
    const double c = EpsilonSquaredCostFresh(2.0, NoiseScale(s), 1e-5);
    EXPECT_LT(c, prev);
    prev = c;
  }
}

TEST(CostPartialTest, ReferenceValue) {
  EXPECT_NEAR(EpsilonSquaredCostPartial(1.0, NoiseScale(1.0), NoiseScale(2.0), 1e-4),
              kPartialExample, 1e-12);
}

TEST(CostPartialTest, VanishesAsSigmaApproachesMinimum) {
  const double c = EpsilonSquaredCostPartial(1.0, NoiseScale(2.0 * (1 - 1e-9)),
                                             NoiseScale(2.0), 1e-4);
  EXPECT_GE(c, 0.0);
  EXPECT_LT(c, 1e-8);
}

TEST(CostPartialTest, RequiresTightening) {
  EXPECT_THROW(EpsilonSquaredCostPartial(1.0, NoiseScale(2.0), NoiseScale(2.0), 1e-4),
               PreconditionViolation);
  EXPECT_THROW(EpsilonSquaredCostPartial(1.0, NoiseScale(3.0), NoiseScale(2.0), 1e-4),
               PreconditionViolation);
}

TEST(CostPartialTest, TelescopesWithFreshCost) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 10.0);
  for (int i = 0; i < 500; ++i) {
    double a = u(rng), b = u(rng), c = u(rng);
    if (a > b) std::swap(a, b);
    if (b > c) std::swap(b, c);
    if (a > b) std::swap(a, b);
    if (!(a < b && b < c)) continue;
    const double d = 0.3;
    const double ab = EpsilonSquaredCostPartial(d, NoiseScale(a), NoiseScale(b), 1e-5);
    const double bc = EpsilonSquaredCostPartial(d, NoiseScale(b), NoiseScale(c), 1e-5);
    const double ac = EpsilonSquaredCostPartial(d, NoiseScale(a), NoiseScale(c), 1e-5);
    EXPECT_LT(std::abs(ab + bc - ac) / ac, 1e-10);

    const double fresh_a = EpsilonSquaredCostFresh(d, NoiseScale(a), 1e-5);
    const double fresh_b = EpsilonSquaredCostFresh(d, NoiseScale(b), 1e-5);
    EXPECT_LT(std::abs(ab + fresh_b - fresh_a) / fresh_a, 1e-12);
  }
}

TEST(CostPartialTest, StrictlyDecreasingTowardMinimum) {
  double prev = INFINITY;
  for (double s = 0.1; s < 2.0; s += 0.1) {
    const double c = EpsilonSquaredCostPartial(1.0, NoiseScale(s), NoiseScale(2.0), 1e-4);
    EXPECT_LT(c, prev);
    prev = c;
  }
}

TEST(EpsilonFromLossVarianceTest, ReferenceValues) {
  EXPECT_EQ(EpsilonFromLossVariance(LossVariance(0.0), 1e-4), 0.0);
  EXPECT_NEAR(EpsilonFromLossVariance(LossVariance(1.0), 1e-4), kEpsAtUnitVariance, 1e-12);
  EXPECT_THROW(LossVariance(-1.0), InvalidParameter);
}

TEST(EpsilonFromLossVarianceTest, AgreesWithSingleReleaseCost) {
  for (double s : {0.2, 1.0, 7.5}) {
    const double cost = EpsilonSquaredCostFresh(1.0, NoiseScale(s), 1e-4);
    const double eps = EpsilonFromLossVariance(LossVariance(1.0 / (s * s)), 1e-4);
    EXPECT_NEAR(eps * eps, cost, 1e-12 * cost);
  }
}

TEST(UtilityAlphaTest, ReferenceValues) {
  EXPECT_NEAR(UtilityAlpha(NoiseScale(1.0), 0.05), kAlphaBeta005, 1e-10);
  EXPECT_NEAR(UtilityAlpha(NoiseScale(1.0), 0.3173), kAlphaOneSigma, 1e-10);
  EXPECT_DOUBLE_EQ(UtilityAlpha(NoiseScale(3.0), 0.05),
                   3.0 * UtilityAlpha(NoiseScale(1.0), 0.05));
  EXPECT_THROW(UtilityAlpha(NoiseScale(1.0), 0.0), InvalidParameter);
  EXPECT_THROW(UtilityAlpha(NoiseScale(1.0), 1.0), InvalidParameter);
}

TEST(UtilityAlphaTest, ErfInvAccuracyAgainstNewtonOracle) {
  for (double y = -0.999; y < 0.999; y += 0.0137) {
    EXPECT_NEAR(boost::math::erf_inv(y), ErfInvOracle(y), 1e-10) << "y=" << y;
  }
}

TEST(UtilityAlphaTest, MonteCarloCoverage) {
  Rng rng(2024);
  const double alpha = UtilityAlpha(NoiseScale(1.7), 0.05);
  int inside = 0;
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    if (std::abs(SampleGaussian(0.0, 1.7, rng)) <= alpha) ++inside;
  }
  const double frac = static_cast<double>(inside) / kDraws;
  EXPECT_GE(frac, 0.944);
  EXPECT_LE(frac, 0.956);
}

TEST(SampleGaussianTest, DegenerateAndErrors) {
  Rng rng(1);
  EXPECT_EQ(SampleGaussian(5.0, 0.0, rng), 5.0);
  EXPECT_THROW(SampleGaussian(0.0, -1.0, rng), InvalidParameter);
}

TEST(SampleGaussianTest, MeanOfManyDraws) {
  Rng rng(99);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) sum += SampleGaussian(0.0, 1.0, rng);
  EXPECT_NEAR(sum / 100000, 0.0, 0.02);
}

TEST(SampleGaussianTest, DeterministicPerSeed) {
  Rng a(123), b(123);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(SampleGaussian(1.0, 2.0, a), SampleGaussian(1.0, 2.0, b));
  }
}

}  // namespace
}  // namespace dpledger
