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

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "dpledger/audit.hpp"
#include "dpledger/config.hpp"
#include "dpledger/http_api.hpp"
#include "dpledger/service.hpp"
#include "dpledger/simulation.hpp"

namespace {

using namespace dpledger;

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitBadConfig = 2;
constexpr int kExitPortInUse = 3;
constexpr int kExitUnknownType = 4;
constexpr int kExitBudgetExhausted = 5;

httplib::Server* g_server = nullptr;

void StopServer(int) {
  if (g_server) g_server->stop();
}

int Listen(httplib::Server& server, const ServiceConfig& cfg) {
  // No SO_REUSEPORT: a second instance on the same port must fail to bind.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR,
                 reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  if (!server.bind_to_port(cfg.listen_host, cfg.listen_port)) {
    std::cerr << "cannot bind " << cfg.listen_host << ":" << cfg.listen_port
              << "\n";
    return kExitPortInUse;
  }
  g_server = &server;
  std::signal(SIGINT, StopServer);
  std::signal(SIGTERM, StopServer);
  std::cout << "listening on " << cfg.listen_host << ":" << cfg.listen_port
            << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return kExitOk;
}

int CmdServe(const std::string& config_path) {
  ServiceConfig cfg;
  std::unique_ptr<HostedDataset> hosted;
  std::unique_ptr<Ledger> ledger;
  std::unique_ptr<QueryService> service;
  try {
    cfg = LoadServiceConfig(config_path);
    hosted = std::make_unique<HostedDataset>(LoadHostedDataset(cfg));
    ledger = std::make_unique<Ledger>(cfg.ledger_path);
    std::shared_ptr<TrueValueSource> server;
    if (cfg.evaluator_url.empty()) {
      server = std::make_shared<LocalEvaluator>(hosted->dataset);
    } else {
      server = std::make_shared<HttpEvaluator>(cfg.evaluator_url);
    }
    ServiceOptions options;
    options.seed = cfg.has_seed ? cfg.seed : std::random_device{}();
    service = std::make_unique<QueryService>(
        hosted->registry, hosted->dataset.content_hash(),
        BudgetState::FromEpsilon(cfg.eps_budget, cfg.delta_budget), *ledger,
        std::move(server), options);
  } catch (const std::exception& e) {
    std::cerr << "serve: " << e.what() << "\n";
    return kExitBadConfig;
  }
  httplib::Server http;
  RegisterRoutes(http, *service);
  return Listen(http, cfg);
}

int CmdServeEvaluator(const std::string& config_path) {
  ServiceConfig cfg;
  std::unique_ptr<HostedDataset> hosted;
  try {
    cfg = LoadServiceConfig(config_path);
    hosted = std::make_unique<HostedDataset>(LoadHostedDataset(cfg));
  } catch (const std::exception& e) {
    std::cerr << "serve-evaluator: " << e.what() << "\n";
    return kExitBadConfig;
  }
  httplib::Server http;
  RegisterEvaluatorRoutes(http, hosted->dataset, hosted->registry);
  return Listen(http, cfg);
}

int CmdIngestCheck(const std::string& config_path) {
  try {
    const ServiceConfig cfg = LoadServiceConfig(config_path);
    const HostedDataset hosted = LoadHostedDataset(cfg);
    std::cout << "rows: " << hosted.dataset.row_count() << "\n"
              << "content_hash: " << ToHex(hosted.dataset.content_hash())
              << "\n";
    for (const auto& spec : hosted.registry.specs()) {
      std::cout << "query type '" << spec.name
                << "': sensitivity=" << FormatDouble(spec.sensitivity)
                << " true_value=" << FormatDouble(Evaluate(hosted.dataset, spec))
                << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "ingest-check: " << e.what() << "\n";
    return kExitBadConfig;
  }
}

int CmdQuery(const std::string& url, const std::string& type,
             std::optional<double> epsilon, std::optional<double> delta,
             std::optional<double> sigma) {
  nlohmann::json body;
  body["query_type"] = type;
  if (epsilon) body["epsilon"] = *epsilon;
  if (delta) body["delta"] = *delta;
  if (sigma) body["sigma"] = *sigma;
  httplib::Client client(url);
  client.set_connection_timeout(5);
  auto res = client.Post("/query", body.dump(), "application/json");
  if (!res) {
    std::cerr << "query: cannot reach " << url << "\n";
    return kExitFailure;
  }
  std::cout << res->body << std::endl;
  switch (res->status) {
    case 200:
      return kExitOk;
    case 404:
      return kExitUnknownType;
    case 409:
      return kExitBudgetExhausted;
    default:
      return kExitFailure;
  }
}

int CmdAudit(const std::string& ledger_path, const std::string& config_path) {
  try {
    const ServiceConfig cfg = LoadServiceConfig(config_path);
    const HostedDataset hosted = LoadHostedDataset(cfg);
    const Ledger ledger{std::filesystem::path(ledger_path)};
    const auto records = ledger.Snapshot();
    const AuditReport report = AuditLedger(
        records, hosted.registry.Sensitivities(),
        hosted.dataset.content_hash(),
        BudgetState::FromEpsilon(cfg.eps_budget, cfg.delta_budget));
    std::cout << "records: " << records.size() << "\n";
    if (report.chain.ok) {
      std::cout << "chain: ok\n";
    } else {
      std::cout << "chain: broken at index " << *report.chain.first_bad_index
                << "\n";
    }
    std::cout << "charged eps^2: " << FormatDouble(report.charged_eps_squared)
              << "\n"
              << "recomputed eps^2: "
              << FormatDouble(report.recomputed_eps_squared) << "\n"
              << "accounting: " << (report.accounting_ok ? "consistent" : "MISMATCH")
              << "\n";
    for (const auto& p : report.problems) std::cout << "problem: " << p << "\n";
    return report.ok() ? kExitOk : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "audit: " << e.what() << "\n";
    return kExitFailure;
  }
}

int CmdSimulate(const std::string& config_path, const std::string& out_path,
                std::optional<std::uint64_t> seed, int runs) {
  try {
    const ServiceConfig cfg = LoadServiceConfig(config_path);
    const HostedDataset hosted = LoadHostedDataset(cfg);
    SimConfig sim = ParseSimConfig(ReadFile(config_path));
    if (seed) sim.seed = *seed;
    std::vector<SimRun> results;
    for (int k = 0; k < runs; ++k) {
      results.push_back(
          RunSimulation(hosted, sim, sim.seed + static_cast<std::uint64_t>(k)));
    }
    std::ofstream out(out_path);
    if (!out) throw StorageError("cannot write " + out_path);
    WriteSimulationCsv(out, results);

    double savings = 0.0, lo = 1.0, hi = 0.0, err_ours = 0.0, err_naive = 0.0;
    for (const SimRun& r : results) {
      const double s = FinalSavings(r);
      savings += s;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
      err_ours += r.relative_error_sum_ours;
      err_naive += r.relative_error_sum_naive;
    }
    const double n = static_cast<double>(results.size());
    std::cout << "runs: " << results.size() << ", queries per run: "
              << sim.num_queries << "\n"
              << "mean savings in final epsilon: " << FormatDouble(savings / n)
              << " (min " << FormatDouble(lo) << ", max " << FormatDouble(hi)
              << ")\n"
              << "mean relative error sum ours/naive: "
              << FormatDouble(err_ours / n) << " / " << FormatDouble(err_naive / n)
              << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "simulate: " << e.what() << "\n";
    return kExitFailure;
  }
}

int CmdUtilitySweep(const std::string& config_path, double delta,
                    double eps_low, double eps_high, int steps,
                    const std::string& out_path) {
  try {
    const ServiceConfig cfg = LoadServiceConfig(config_path);
    const HostedDataset hosted = LoadHostedDataset(cfg);
    const auto& types = hosted.registry.specs();
    const auto rows = UtilitySweep(types, delta, eps_low, eps_high, steps);
    std::ofstream out(out_path);
    if (!out) throw StorageError("cannot write " + out_path);
    WriteUtilityCsv(out, types, rows);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "utility-sweep: " << e.what() << "\n";
    return kExitFailure;
  }
}

int CmdSynth(std::size_t rows, std::uint64_t seed, const std::string& out_path) {
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "synth: cannot write " << out_path << "\n";
    return kExitFailure;
  }
  out << SyntheticSurveyCsv(rows, seed);
  return out ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differential-privacy query service with noise reuse and a "
               "hash-chained release ledger"};
  app.require_subcommand(1);

  std::string config_path;
  std::string ledger_path;
  std::string out_path;
  std::string url = "http://127.0.0.1:8080";
  std::string type;
  std::optional<double> epsilon, delta, sigma;
  std::optional<std::uint64_t> seed;
  int runs = 1;
  double sweep_delta = 1e-5, eps_low = 1.0, eps_high = 8.0;
  int steps = 15;
  std::size_t synth_rows = 5000;
  std::uint64_t synth_seed = 7;

  auto* serve = app.add_subcommand("serve", "Run the HTTP JSON API");
  serve->add_option("--config", config_path, "Service config file")->required();

  auto* serve_eval = app.add_subcommand(
      "serve-evaluator", "Host only the dataset evaluator endpoint");
  serve_eval->add_option("--config", config_path, "Service config file")->required();

  auto* ingest = app.add_subcommand("ingest-check",
                                    "Load the dataset and list query types");
  ingest->add_option("--config", config_path, "Service config file")->required();

  auto* query = app.add_subcommand("query", "Submit one query to a service");
  query->add_option("--url", url, "Service base URL");
  query->add_option("--type", type, "Registered query type")->required();
  query->add_option("--epsilon", epsilon, "Requested epsilon");
  query->add_option("--delta", delta, "Requested delta");
  query->add_option("--sigma", sigma, "Precomputed noise scale");

  auto* audit = app.add_subcommand("audit", "Verify a ledger and its accounting");
  audit->add_option("--ledger", ledger_path, "Ledger file")->required();
  audit->add_option("--config", config_path, "Service config file")->required();

  auto* simulate = app.add_subcommand(
      "simulate", "Compare noise reuse against independent answering");
  simulate->add_option("--config", config_path, "Config with a simulation section")
      ->required();
  simulate->add_option("--out", out_path, "CSV output")->required();
  simulate->add_option("--seed", seed, "First seed (overrides config)");
  simulate->add_option("--runs", runs, "Number of seeds")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("utility-sweep",
                                   "Noise scale and error bound versus epsilon");
  sweep->add_option("--config", config_path, "Service config file")->required();
  sweep->add_option("--out", out_path, "CSV output")->required();
  sweep->add_option("--delta", sweep_delta, "Fixed delta");
  sweep->add_option("--eps-low", eps_low, "Smallest epsilon");
  sweep->add_option("--eps-high", eps_high, "Largest epsilon");
  sweep->add_option("--steps", steps, "Number of epsilon values");

  auto* synth = app.add_subcommand("synth", "Write a synthetic survey CSV");
  synth->add_option("--rows", synth_rows, "Row count");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", out_path, "CSV output")->required();

  CLI11_PARSE(app, argc, argv);

  if (*serve) return CmdServe(config_path);
  if (*serve_eval) return CmdServeEvaluator(config_path);
  if (*ingest) return CmdIngestCheck(config_path);
  if (*query) return CmdQuery(url, type, epsilon, delta, sigma);
  if (*audit) return CmdAudit(ledger_path, config_path);
  if (*simulate) return CmdSimulate(config_path, out_path, seed, runs);
  if (*sweep) {
    return CmdUtilitySweep(config_path, sweep_delta, eps_low, eps_high, steps,
                           out_path);
  }
  if (*synth) return CmdSynth(synth_rows, synth_seed, out_path);
  return kExitFailure;
}
