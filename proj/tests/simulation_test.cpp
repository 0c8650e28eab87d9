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

#include "dpledger/simulation.hpp"

#include <filesystem>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dpledger/config.hpp"

namespace dpledger {
namespace {

const std::filesystem::path kConfig =
    std::filesystem::path(DPLEDGER_DATA_DIR) / "experiment.json";

const HostedDataset& Hosted() {
  static const HostedDataset* hosted =
      new HostedDataset(LoadHostedDataset(LoadServiceConfig(kConfig)));
  return *hosted;
}

SimConfig Small(int n) {
  SimConfig cfg;
  cfg.num_queries = n;
  return cfg;
}

std::string Csv(const SimRun& run) {
  std::ostringstream out;
  WriteSimulationCsv(out, std::span<const SimRun>(&run, 1));
  return out.str();
}

TEST(SimConfigTest, ReadsExperimentSection) {
  const SimConfig cfg = ParseSimConfig(ReadFile(kConfig));
  EXPECT_EQ(cfg.epsilon_low, 0.1);
  EXPECT_EQ(cfg.epsilon_high, 1.1);
  EXPECT_EQ(cfg.delta_low, 1e-5);
  EXPECT_EQ(cfg.delta_high, 1e-4);
  EXPECT_EQ(cfg.num_queries, 150);
  EXPECT_EQ(cfg.seed, 1u);
  EXPECT_EQ(cfg.eps_budget, 8.0);
  EXPECT_EQ(cfg.delta_budget, 1e-4);
}

TEST(SimConfigTest, RejectsBadRanges) {
  EXPECT_THROW(ParseSimConfig(R"({"simulation": {"epsilon_range": [0, 1]}})"),
               InvalidParameter);
  EXPECT_THROW(ParseSimConfig(R"({"simulation": {"delta_range": [1e-4, 1]}})"),
               InvalidParameter);
  EXPECT_THROW(ParseSimConfig(R"({"simulation": {"num_queries": 0}})"),
               InvalidParameter);
  EXPECT_THROW(ParseSimConfig(R"({"simulation": {"num_queries": "x"}})"),
               ConfigError);
}

TEST(SampleStreamTest, RespectsRangesAndWeights) {
  SimConfig cfg = Small(400);
  cfg.query_type_weights = {{"average personal income", 1.0},
                            {"frequency of white race", 0.0}};
  const auto stream = SampleQueryStream(Hosted().registry, cfg, 3);
  ASSERT_EQ(stream.size(), 400u);
  for (const auto& q : stream) {
    EXPECT_EQ(q.spec->name, "average personal income");
    EXPECT_GE(q.epsilon, cfg.epsilon_low);
    EXPECT_LE(q.epsilon, cfg.epsilon_high);
    EXPECT_GE(q.delta, cfg.delta_low);
    EXPECT_LE(q.delta, cfg.delta_high);
  }
  cfg.query_type_weights = {{"no such type", 1.0}};
  EXPECT_THROW(SampleQueryStream(Hosted().registry, cfg, 3), NotFound);
}

TEST(SimulationTest, SameSeedSameCsv) {
  const SimRun a = RunSimulation(Hosted(), Small(60), 5);
  const SimRun b = RunSimulation(Hosted(), Small(60), 5);
  const SimRun c = RunSimulation(Hosted(), Small(60), 6);
  EXPECT_EQ(Csv(a), Csv(b));
  EXPECT_NE(Csv(a), Csv(c));
}

TEST(SimulationTest, SingleQueryHasNoSavings) {
  const SimRun run = RunSimulation(Hosted(), Small(1), 9);
  ASSERT_EQ(run.rows.size(), 1u);
  EXPECT_EQ(run.rows[0].case_tag, CaseKind::kFreshFirstTime);
  EXPECT_EQ(run.final_eps_ours(), run.final_eps_naive());
  EXPECT_EQ(run.relative_error_sum_ours, run.relative_error_sum_naive);
}

TEST(SimulationTest, OursNeverExceedsNaive) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SimRun run = RunSimulation(Hosted(), Small(150), seed);
    for (const SimRow& r : run.rows) {
      EXPECT_LE(r.cumulative_eps_ours, r.cumulative_eps_naive * (1 + 1e-12))
          << "seed " << seed << " row " << r.index;
      EXPECT_LE(r.ours_over_budget, r.naive_over_budget);
    }
    EXPECT_GT(FinalSavings(run), 0.0);
  }
}

TEST(SimulationTest, OverBudgetFlagsTrackSpend) {
  const SimRun run = RunSimulation(Hosted(), Small(150), 2);
  for (const SimRow& r : run.rows) {
    EXPECT_EQ(r.ours_over_budget, r.cumulative_eps_squared_ours > 64.0);
    EXPECT_EQ(r.naive_over_budget,
              r.cumulative_eps_naive * r.cumulative_eps_naive > 64.0 * (1 + 1e-12));
  }
}

TEST(SimulationTest, CsvLayout) {
  const SimRun run = RunSimulation(Hosted(), Small(3), 4);
  std::istringstream in(Csv(run));
  std::string comment, header, first;
  std::getline(in, comment);
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(comment.rfind("# relative_error", 0), 0u);
  EXPECT_EQ(header.rfind("run,seed,index,query_type,epsilon,delta,sigma,case,", 0), 0u);
  EXPECT_EQ(first.rfind("0,4,1,", 0), 0u);
  EXPECT_EQ(CsvField("a,b"), "\"a,b\"");
  EXPECT_EQ(CsvField("say \"x\""), "\"say \"\"x\"\"\"");
}

TEST(UtilitySweepTest, MonotoneAndSharedSensitivities) {
  const auto& specs = Hosted().registry.specs();
  const auto rows = UtilitySweep(specs, 1e-5, 1.0, 8.0, 15);
  ASSERT_EQ(rows.size(), 15u);
  EXPECT_EQ(rows.front().epsilon, 1.0);
  EXPECT_EQ(rows.back().epsilon, 8.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].sigma[2], rows[i].sigma[3]);
    EXPECT_EQ(rows[i].sigma[3], rows[i].sigma[4]);
    for (std::size_t t = 0; t < specs.size(); ++t) {
      EXPECT_EQ(rows[i].alpha[t], 2.0 * rows[i].sigma[t]);
      if (i > 0) {
        EXPECT_LT(rows[i].alpha[t], rows[i - 1].alpha[t]);
      }
    }
  }
  // Doubling epsilon halves sigma.
  const auto pair = UtilitySweep(specs, 1e-5, 2.0, 4.0, 2);
  for (std::size_t t = 0; t < specs.size(); ++t) {
    EXPECT_NEAR(pair[1].sigma[t], pair[0].sigma[t] / 2, 1e-12 * pair[0].sigma[t]);
  }
  EXPECT_NEAR(rows[0].sigma[0], 202 * 4.8448052626053894, 1e-9);
  EXPECT_THROW(UtilitySweep(specs, 1e-5, 2.0, 1.0, 5), InvalidParameter);
}

TEST(UtilitySweepTest, CsvHeader) {
  const auto& specs = Hosted().registry.specs();
  std::ostringstream out;
  WriteUtilityCsv(out, specs, UtilitySweep(specs, 1e-5, 1.0, 2.0, 2));
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("epsilon,sigma:average personal income,", 0), 0u);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2);
}

TEST(SyntheticSurveyTest, DeterministicAndWithinDomains) {
  EXPECT_EQ(SyntheticSurveyCsv(200, 3), SyntheticSurveyCsv(200, 3));
  EXPECT_NE(SyntheticSurveyCsv(200, 3), SyntheticSurveyCsv(200, 4));
  const ServiceConfig cfg = LoadServiceConfig(kConfig);
  EXPECT_EQ(IngestCsv(SyntheticSurveyCsv(2000, 11), cfg.schema).row_count(), 2000u);
}

}  // namespace
}  // namespace dpledger
