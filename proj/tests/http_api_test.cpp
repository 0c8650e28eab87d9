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

#include "dpledger/http_api.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include <gtest/gtest.h>

#include "dpledger/config.hpp"
#include "test_support.hpp"

namespace dpledger {
namespace {

using nlohmann::json;

// Runs an httplib server on an ephemeral loopback port for one test.
class RunningServer {
 public:
  explicit RunningServer(const std::function<void(httplib::Server&)>& mount) {
    mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~RunningServer() {
    server_.stop();
    thread_.join();
  }
  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

class HttpApiTest : public ::testing::Test {
 protected:
  HttpApiTest()
      : hosted_(LoadHostedDataset(
            LoadServiceConfig(std::filesystem::path(DPLEDGER_DATA_DIR) /
                              "experiment.json"))),
        service_(hosted_.registry, hosted_.dataset.content_hash(),
                 BudgetState::FromEpsilon(8.0, 1e-4), ledger_,
                 std::make_shared<LocalEvaluator>(hosted_.dataset),
                 {ReuseMode::kReuse, 1, testing::FixedClock}),
        server_([this](httplib::Server& s) { RegisterRoutes(s, service_); }),
        client_("127.0.0.1", server_.port()) {}

  httplib::Result Post(const json& body) {
    return client_.Post("/query", body.dump(), "application/json");
  }
  json GetJson(const std::string& path, int expected_status = 200) {
    auto res = client_.Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expected_status) << res->body;
    return json::parse(res->body);
  }

  HostedDataset hosted_;
  Ledger ledger_;
  QueryService service_;
  RunningServer server_;
  httplib::Client client_;
};

TEST_F(HttpApiTest, QueryAndBudget) {
  EXPECT_EQ(GetJson("/budget")["eps_squared_remaining"], 64.0);
  EXPECT_NEAR(GetJson("/budget")["eps_remaining"].get<double>(), 8.0, 1e-12);

  auto res = Post({{"query_type", "frequency of white race"},
                   {"epsilon", 1.0},
                   {"delta", 1e-4}});
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const json body = json::parse(res->body);
  EXPECT_EQ(body["case_tag"]["kind"], "FreshFirstTime");
  EXPECT_EQ(body["case_tag"]["label"], "1");
  EXPECT_TRUE(body["case_tag"]["ref"].is_null());
  EXPECT_NEAR(body["eps_squared_cost"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(body["record_index"], 0);
  EXPECT_EQ(body["server_accessed"], true);
  EXPECT_NEAR(GetJson("/budget")["eps_squared_remaining"].get<double>(), 63.0, 1e-12);

  auto again = Post({{"query_type", "frequency of white race"},
                     {"sigma", body["sigma"]}});
  ASSERT_TRUE(again);
  const json second = json::parse(again->body);
  EXPECT_EQ(second["case_tag"]["label"], "2A");
  EXPECT_EQ(second["case_tag"]["ref"], 0);
  EXPECT_EQ(second["noisy_value"], body["noisy_value"]);
}

TEST_F(HttpApiTest, ErrorContract) {
  auto bad = Post({{"query_type", "frequency of white race"},
                   {"epsilon", 0.0},
                   {"delta", 1e-4}});
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["code"], "invalid_parameter");

  auto missing = Post({{"query_type", "nope"}, {"sigma", 1.0}});
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["code"], "not_found");

  auto garbage = client_.Post("/query", "{not json", "application/json");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);

  auto typed = Post({{"query_type", 5}, {"sigma", 1.0}});
  ASSERT_TRUE(typed);
  EXPECT_EQ(typed->status, 400);

  auto expensive = Post({{"query_type", "average personal income"},
                         {"epsilon", 9.0},
                         {"delta", 1e-4}});
  ASSERT_TRUE(expensive);
  EXPECT_EQ(expensive->status, 409);
  const json err = json::parse(expensive->body);
  EXPECT_EQ(err["code"], "insufficient_budget");
  EXPECT_EQ(err["eps_squared_remaining"], 64.0);
  EXPECT_EQ(ledger_.size(), 0u);
}

TEST_F(HttpApiTest, LedgerPagingAndVerify) {
  for (double eps : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    auto res = Post({{"query_type", "frequency of age more than 60"},
                     {"epsilon", eps},
                     {"delta", 1e-5}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
  }
  const json all = GetJson("/ledger");
  EXPECT_EQ(all["offset"], 0);
  ASSERT_EQ(all["records"].size(), 5u);
  EXPECT_EQ(all["records"][0]["prev_hash"], std::string(64, '0'));
  EXPECT_EQ(all["records"][1]["prev_hash"], all["records"][0]["record_hash"]);
  EXPECT_EQ(RecordFromJson(all["records"][3]), *ledger_.At(3));

  const json page = GetJson("/ledger?offset=2&limit=2");
  EXPECT_EQ(page["offset"], 2);
  ASSERT_EQ(page["records"].size(), 2u);
  EXPECT_EQ(page["records"][0]["index"], 2);
  EXPECT_TRUE(GetJson("/ledger?offset=50")["records"].empty());
  EXPECT_EQ(GetJson("/ledger?limit=-1", 400)["code"], "invalid_parameter");

  const json verdict = GetJson("/ledger/verify");
  EXPECT_EQ(verdict["ok"], true);
  EXPECT_TRUE(verdict["first_bad_index"].is_null());

  const json report = GetJson("/report");
  EXPECT_EQ(report["series"].size(), 5u);
  EXPECT_LT(report["eps_ours"].get<double>(), report["eps_naive"].get<double>());
}

TEST(HttpJsonTest, TamperedVerdictBody) {
  testing::WorkedExampleHarness h;
  h.ReplayAll();
  auto records = h.ledger.Snapshot();
  records[6].eps_squared_cost = 1.0;
  const Json verdict = ToJson(VerifyRecords(records));
  EXPECT_EQ(verdict.dump(), R"({"ok":false,"first_bad_index":6})");
}

TEST_F(HttpApiTest, QueryTypesListing) {
  const json list = GetJson("/query-types");
  ASSERT_EQ(list.size(), 5u);
  EXPECT_EQ(list[0]["name"], "average personal income");
  EXPECT_EQ(list[0]["kind"], "average");
  EXPECT_DOUBLE_EQ(list[0]["sensitivity"].get<double>(), 202.0);
  EXPECT_DOUBLE_EQ(list[1]["sensitivity"].get<double>(), 404.0);
  for (int i = 2; i < 5; ++i) {
    EXPECT_EQ(list[i]["kind"], "frequency");
    EXPECT_DOUBLE_EQ(list[i]["sensitivity"].get<double>(), 0.0002);
  }
  EXPECT_EQ(list[4]["op"], ">");
  EXPECT_EQ(list[4]["value"], 60.0);
}

TEST(HttpEvaluatorTest, RemoteTrueValues) {
  const HostedDataset hosted = LoadHostedDataset(LoadServiceConfig(
      std::filesystem::path(DPLEDGER_DATA_DIR) / "experiment.json"));
  RunningServer evaluator([&](httplib::Server& s) {
    RegisterEvaluatorRoutes(s, hosted.dataset, hosted.registry);
  });
  HttpEvaluator remote(evaluator.url());
  for (const auto& spec : hosted.registry.specs()) {
    EXPECT_EQ(remote.TrueValue(spec), Evaluate(hosted.dataset, spec)) << spec.name;
  }
  EXPECT_THROW(remote.TrueValue({"unknown", AverageOfColumn{"age", 0, 1}, 1.0}),
               ServerUnavailable);

  HttpEvaluator down("http://127.0.0.1:1");
  EXPECT_THROW(down.TrueValue(hosted.registry.specs()[0]), ServerUnavailable);
}

}  // namespace
}  // namespace dpledger
