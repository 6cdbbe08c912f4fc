#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fedchain/bench.hpp"
#include "testutil.hpp"

using namespace fedchain;
using namespace fedchain::bench;

namespace {

ScenarioConfig tiny_scenario(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.n_clients = 4;
  cfg.samples_per_client = 24;
  cfg.rounds = 2;
  cfg.local_epochs = 1;
  cfg.eta = 0.5;
  cfg.batch_size = 8;
  cfg.model.d_model = 8;
  cfg.model.d_ff = 16;
  cfg.model.max_len = 48;
  cfg.unlearn_epochs = 3;
  cfg.unlearn_eta = 100.0;
  cfg.unlearn_clip = 1e-3;
  cfg.unlearn_batch = 8;
  cfg.val_samples = 24;
  cfg.seed = seed;
  cfg.criteria.tau_forget = 1.0;  // counting tests want the commit to happen
  return cfg;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("fedchain_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("generate_corpus is deterministic per seed") {
  auto a = corpus::generate_corpus(77, 50, 0.5);
  auto b = corpus::generate_corpus(77, 50, 0.5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].text == b[i].text);
    CHECK(a[i].label == b[i].label);
  }
  auto c = corpus::generate_corpus(78, 50, 0.5);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].text != c[i].text) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("the marker-lookup oracle scores 100% on any generated corpus") {
  for (std::uint64_t seed : {1ull, 9ull, 123ull}) {
    for (double balance : {0.3, 0.5, 1.0}) {
      auto data = corpus::generate_corpus(seed, 120, balance);
      for (const auto& ex : data) CHECK(corpus::rule_label(ex.text) == ex.label);
    }
  }
}

TEST_CASE("class balance lands inside the binomial bound") {
  for (std::uint64_t seed : {5ull, 6ull, 7ull}) {
    auto data = corpus::generate_corpus(seed, 1000, 0.5);
    std::size_t ones = 0;
    for (const auto& ex : data) ones += ex.label;
    CHECK(ones >= 450);
    CHECK(ones <= 550);
  }
}

TEST_CASE("generated sentences fit the model window and alphabet") {
  auto data = corpus::generate_corpus(11, 200, 0.5);
  for (const auto& ex : data) {
    CHECK(ex.text.size() <= 64);
    CHECK(!ex.text.empty());
    for (char ch : ex.text) {
      bool ok = (ch >= 'a' && ch <= 'h') || ch == ' ' || ch == 'z' || ch == 'q';
      CHECK(ok);
    }
  }
}

TEST_CASE("load_csv_corpus") {
  auto dir = temp_dir("csv");

  SUBCASE("well-formed file loads in order") {
    auto path = dir / "ok.csv";
    std::ofstream(path) << "id,text,label\n1,\"hello, there\",1\n2,plain,0\n3,\"with "
                           "\"\"quotes\"\"\",1\n";
    auto rows = corpus::load_csv_corpus(path.string(), "text", "label");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].text == "hello, there");
    CHECK(rows[0].label == 1);
    CHECK(rows[1].text == "plain");
    CHECK(rows[2].text == "with \"quotes\"");
  }

  SUBCASE("bad label reports its data row") {
    auto path = dir / "bad.csv";
    std::ofstream out(path);
    out << "text,label\n";
    for (int i = 1; i <= 10; ++i) out << "row" << i << "," << (i == 5 ? "2" : "1") << "\n";
    out.close();
    try {
      corpus::load_csv_corpus(path.string(), "text", "label");
      FAIL("expected BadLabel");
    } catch (const corpus::BadLabelError& e) {
      CHECK(e.row == 5);
      CHECK(e.name() == "BadLabel(5)");
    }
  }

  SUBCASE("limit truncates") {
    auto path = dir / "limit.csv";
    std::ofstream out(path);
    out << "text,label\n";
    for (int i = 0; i < 10; ++i) out << "t" << i << ",0\n";
    out.close();
    auto rows = corpus::load_csv_corpus(path.string(), "text", "label", 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].text == "t0");
    CHECK(rows[1].text == "t1");
  }

  SUBCASE("missing column and missing file") {
    auto path = dir / "cols.csv";
    std::ofstream(path) << "a,b\n1,2\n";
    CHECK_THROWS_AS(corpus::load_csv_corpus(path.string(), "text", "label"),
                    corpus::MissingColumnError);
    CHECK_THROWS_AS(corpus::load_csv_corpus((dir / "nope.csv").string(), "text", "label"),
                    IoError);
  }
}

TEST_CASE("time_cost_model reproduces the reference timings") {
  SUBCASE("paper profile, one iteration, one tx") {
    auto tc = time_cost_model(LatencyProfile::paper(), 1, 1);
    CHECK(tc.normal_s == 30.0);
    CHECK(tc.enhanced_s == 79.0);
  }
  SUBCASE("additive model at ten iterations") {
    auto tc = time_cost_model(LatencyProfile::paper(), 10, 1);
    CHECK(tc.normal_s == 300.0);
    CHECK(tc.enhanced_s == 376.0);  // 42 + 4 + 10*(30+3)
  }
  SUBCASE("zero profile collapses enhanced to normal") {
    auto tc = time_cost_model(LatencyProfile::zero(), 25, 7);
    CHECK(tc.enhanced_s == tc.normal_s);
  }
  SUBCASE("iterations must be positive") {
    CHECK_THROWS_AS(time_cost_model(LatencyProfile::paper(), 0, 1), ModuleError);
  }
}

TEST_CASE("scenario config JSON round-trip") {
  ScenarioConfig cfg = tiny_scenario(9);
  cfg.criteria.delta_retain = 0.25;
  cfg.latency = LatencyProfile::zero();
  auto j = cfg.to_json();
  auto back = ScenarioConfig::from_json(j);
  CHECK(back.to_json().dump() == j.dump());
  CHECK(back.n_clients == 4);
  CHECK(back.criteria.delta_retain.has_value());
  CHECK(back.latency.name == "zero");
}

TEST_CASE("run_scenario ledgers the full protocol") {
  ScenarioConfig cfg = tiny_scenario(31);
  auto result = run_scenario(cfg);
  CHECK(result.status == "Ok");

  auto replay = chaincode::replay_from_jsonl(result.ledger_jsonl);
  CHECK(replay.chain_ok);
  CHECK(replay.kind_counts["Register"] == cfg.n_clients + 1);  // clients + agent
  CHECK(replay.kind_counts["ModelUpload"] == 1);
  CHECK(replay.kind_counts["ParameterSubmission"] == cfg.rounds * cfg.n_clients);
  CHECK(replay.kind_counts["AggregatedModel"] == cfg.rounds);
  CHECK(replay.kind_counts["UnlearnResult"] == 1);
  CHECK(replay.kind_counts["VerificationRecord"] == 1);
  CHECK(replay.final_model_digest_hex == result.final_model_digest_hex);
}

TEST_CASE("reruns with identical config and seed are byte-identical") {
  ScenarioConfig cfg = tiny_scenario(55);
  auto a = run_scenario(cfg);
  auto b = run_scenario(cfg);
  CHECK(testutil::sha256_hex(a.metrics_csv) == testutil::sha256_hex(b.metrics_csv));
  CHECK(testutil::sha256_hex(a.ledger_jsonl) == testutil::sha256_hex(b.ledger_jsonl));
  CHECK(a.unlearn_csv == b.unlearn_csv);

  ScenarioConfig other = tiny_scenario(56);
  auto c = run_scenario(other);
  CHECK(testutil::sha256_hex(a.ledger_jsonl) != testutil::sha256_hex(c.ledger_jsonl));
}

TEST_CASE("failed verification leaves no unlearning transactions") {
  ScenarioConfig cfg = tiny_scenario(77);
  cfg.unlearn_epochs = 0;        // report leaves the model unchanged
  cfg.criteria.tau_forget = 0.0;  // so any nonzero forget accuracy fails
  auto result = run_scenario(cfg);
  CHECK(result.status == "CriteriaNotMet");
  auto replay = chaincode::replay_from_jsonl(result.ledger_jsonl);
  CHECK(replay.kind_counts["UnlearnResult"] == 0);
  CHECK(replay.kind_counts["VerificationRecord"] == 0);
}

TEST_CASE("simulated time is non-decreasing across the ledger") {
  ScenarioConfig cfg = tiny_scenario(91);
  auto result = run_scenario(cfg);
  double last = -1.0;
  std::size_t pos = 0;
  while (pos < result.ledger_jsonl.size()) {
    auto end = result.ledger_jsonl.find('\n', pos);
    if (end == std::string::npos) break;
    auto jb = nlohmann::json::parse(result.ledger_jsonl.substr(pos, end - pos));
    for (const auto& jt : jb["transactions"]) {
      double t = jt["sim_time_s"].get<double>();
      CHECK(t >= last);
      last = t;
    }
    pos = end + 1;
  }
  CHECK(result.sim_end_s >= last);
}

TEST_CASE("every transaction id cited in the metrics resolves on the chain") {
  ScenarioConfig cfg = tiny_scenario(101);
  auto result = run_scenario(cfg);

  // collect every t_id in the export
  std::set<std::string> on_chain;
  std::size_t pos = 0;
  while (pos < result.ledger_jsonl.size()) {
    auto end = result.ledger_jsonl.find('\n', pos);
    if (end == std::string::npos) break;
    auto jb = nlohmann::json::parse(result.ledger_jsonl.substr(pos, end - pos));
    for (const auto& jt : jb["transactions"]) on_chain.insert(jt["t_id"].get<std::string>());
    pos = end + 1;
  }

  std::istringstream metrics(result.metrics_csv);
  std::string line;
  std::getline(metrics, line);  // header
  std::size_t cited = 0;
  while (std::getline(metrics, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    REQUIRE(cols.size() == 8);
    for (std::size_t idx : {std::size_t{5}, std::size_t{6}}) {
      if (!cols[idx].empty()) {
        CHECK(on_chain.count(cols[idx]) == 1);
        ++cited;
      }
    }
  }
  CHECK(cited > 0);
}

TEST_CASE("sweep produces the expected row structure and a baseline summary") {
  ScenarioConfig base = tiny_scenario(7);
  base.n_clients = 2;
  base.samples_per_client = 20;
  base.rounds = 2;
  base.val_samples = 16;
  base.model.d_model = 16;  // the grid sweeps r up to 16
  base.model.d_ff = 32;

  SweepGrid grid;
  grid.r = {4, 16};
  grid.alpha = {4.0};
  grid.dropout = {0.3};
  grid.seeds = {1, 2, 3, 4, 5};

  auto sweep = run_sweep(base, grid);
  // r in {4,16} x 5 seeds: 10 rows per (alpha, dropout) cell
  CHECK(sweep.rows.size() == 10);

  auto files = emit_report(sweep);
  std::size_t lines = std::count(files.sweep_csv.begin(), files.sweep_csv.end(), '\n');
  CHECK(lines == 11);  // header + 10 rows

  CHECK(files.summary_csv.find("retrain_from_scratch") != std::string::npos);
  CHECK(files.by_alpha_csv.rfind("alpha,", 0) == 0);
  CHECK(files.by_dropout_csv.rfind("dropout,", 0) == 0);
  CHECK(files.by_r_csv.rfind("r,", 0) == 0);

  // re-emitting from identical inputs is byte-identical
  auto again = emit_report(sweep);
  CHECK(again.sweep_csv == files.sweep_csv);
  CHECK(again.summary_csv == files.summary_csv);
  CHECK(again.by_alpha_csv == files.by_alpha_csv);

  auto dir = temp_dir("report");
  write_report_files(files, dir);
  CHECK(std::filesystem::exists(dir / "sweep.csv"));
  CHECK(std::filesystem::exists(dir / "summary.csv"));
}

TEST_CASE("forget_fraction limits the erased subset") {
  ScenarioConfig cfg = tiny_scenario(17);
  cfg.forget_fraction = 0.25;
  auto result = run_scenario(cfg);
  REQUIRE(result.unlearn_report.has_value());
  // 24 samples -> 6 in the forget set; one ascent batch of 8 covers them
  CHECK(result.unlearn_gradient_steps <= cfg.unlearn_epochs);
  CHECK(result.status == "Ok");
}

TEST_CASE("digest-only scenarios ledger digests instead of weights") {
  ScenarioConfig cfg = tiny_scenario(19);
  cfg.digest_only_payloads = true;
  auto result = run_scenario(cfg);
  CHECK(result.status == "Ok");
  // every model payload digest present in the export is sha256(weights digest)
  auto replay = chaincode::replay_from_jsonl(result.ledger_jsonl);
  CHECK(replay.chain_ok);
  CHECK(replay.kind_counts["AggregatedModel"] == cfg.rounds);
  // round trip through config JSON keeps the switch
  auto back = ScenarioConfig::from_json(cfg.to_json());
  CHECK(back.digest_only_payloads);
}

TEST_CASE("trend report groups mean forget accuracy per hyperparameter value") {
  ScenarioConfig base = tiny_scenario(23);
  base.n_clients = 2;
  base.samples_per_client = 20;
  base.rounds = 1;
  base.val_samples = 16;
  base.model.d_model = 16;
  base.model.d_ff = 32;
  SweepGrid grid;
  grid.r = {4, 8};
  grid.alpha = {2.0, 4.0};
  grid.dropout = {0.3};
  grid.seeds = {1, 2};
  auto sweep = run_sweep(base, grid);
  auto files = emit_report(sweep);
  CHECK(files.trends_csv.rfind("parameter,value,mean_acc_forget_after,n\n", 0) == 0);
  CHECK(files.trends_csv.find("alpha,2,") != std::string::npos);
  CHECK(files.trends_csv.find("alpha,4,") != std::string::npos);
  CHECK(files.trends_csv.find("dropout,0.3,") != std::string::npos);
  CHECK(files.trends_csv.find("r,8,") != std::string::npos);
  // each alpha bucket covers r x seeds = 4 rows
  CHECK(files.trends_csv.find(",4\n") != std::string::npos);
}

TEST_CASE("scenario artifacts write to disk") {
  ScenarioConfig cfg = tiny_scenario(13);
  auto result = run_scenario(cfg);
  auto dir = temp_dir("artifacts");
  result.write_artifacts(dir);
  std::ifstream metrics(dir / "metrics.csv", std::ios::binary);
  std::stringstream buf;
  buf << metrics.rdbuf();
  CHECK(buf.str() == result.metrics_csv);
  CHECK(std::filesystem::exists(dir / "ledger.jsonl"));
  CHECK(std::filesystem::exists(dir / "unlearn.csv"));
}
