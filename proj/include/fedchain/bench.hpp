#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchain/chaincode.hpp"
#include "fedchain/corpus.hpp"
#include "fedchain/fedcore.hpp"
#include "fedchain/identity.hpp"
#include "fedchain/ledger.hpp"
#include "fedchain/tinylm.hpp"
#include "fedchain/unlearner.hpp"

// Scenario harness: corpus generation, the end-to-end protocol run
// (register -> upload -> federated rounds -> unlearn -> verify -> commit), the
// blockchain time-cost model on the simulated clock, hyperparameter sweeps,
// and CSV/JSONL report emission. Reruns with identical config and seeds
// produce byte-identical artifacts.

namespace fedchain::bench {

using tinylm::Example;

// Shortest round-trip decimal; used for every float that lands in a CSV.
inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct LatencyProfile {
  std::string name = "paper";
  double setup_s = 42.0;
  double consensus_s = 4.0;
  double tx_s = 3.0;
  double epoch_s = 30.0;

  static LatencyProfile paper() { return LatencyProfile{}; }
  static LatencyProfile zero() { return LatencyProfile{"zero", 0.0, 0.0, 0.0, 0.0}; }

  static std::optional<LatencyProfile> by_name(std::string_view n) {
    if (n == "paper") return paper();
    if (n == "zero") return zero();
    return std::nullopt;
  }
};

struct TimeCost {
  double normal_s = 0.0;
  double enhanced_s = 0.0;
};

// normal = iterations * epoch; enhanced adds one-time setup + consensus and a
// per-iteration transaction overhead (additive model).
inline TimeCost time_cost_model(const LatencyProfile& p, std::size_t iterations,
                                std::size_t txs_per_iteration) {
  if (iterations < 1) throw ModuleError("BadIterationCount", "iterations must be >= 1");
  TimeCost out;
  out.normal_s = static_cast<double>(iterations) * p.epoch_s;
  out.enhanced_s = p.setup_s + p.consensus_s +
                   static_cast<double>(iterations) *
                       (p.epoch_s + static_cast<double>(txs_per_iteration) * p.tx_s);
  return out;
}

struct CorpusSource {
  enum class Type { Synthetic, Csv };
  Type type = Type::Synthetic;
  std::string path;
  std::string text_column = "text";
  std::string label_column = "label";
  std::size_t limit = SIZE_MAX;
};

struct ScenarioConfig {
  std::size_t n_clients = 4;
  std::size_t samples_per_client = 200;
  std::size_t rounds = 30;
  std::size_t local_epochs = 2;
  double eta = 0.5;
  std::size_t batch_size = 16;
  fedcore::UpdateFlavor flavor = fedcore::UpdateFlavor::Full;
  tinylm::LoraConfig fed_lora;  // used when flavor == Adapter
  tinylm::ModelConfig model;

  std::string forget_client = "c1";
  double forget_balance = 1.0;   // forget client's label-1 fraction
  double forget_fraction = 1.0;  // portion of the forget client's data to erase
  bool digest_only_payloads = false;  // large-model switch: ledger digests, not weights

  std::size_t unlearn_epochs = 20;
  double unlearn_eta = 1e5;
  double unlearn_clip = 1e-3;
  std::size_t unlearn_batch = 32;
  tinylm::LoraConfig unlearn_lora{8, 4.0, 0.3, true, true};
  std::optional<double> stop_forget_acc = 0.05;

  unlearner::VerificationCriteria criteria;

  std::uint64_t seed = 1;
  LatencyProfile latency;
  CorpusSource corpus;
  std::size_t val_samples = 200;
  double token_ttl_s = 3600.0;

  // Label-1 fraction for retain clients so the pooled training distribution
  // stays balanced around 0.5.
  double retain_balance() const {
    if (n_clients <= 1) return 0.5;
    double b = (0.5 * static_cast<double>(n_clients) - forget_balance) /
               static_cast<double>(n_clients - 1);
    return std::clamp(b, 0.0, 1.0);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["n_clients"] = n_clients;
    j["samples_per_client"] = samples_per_client;
    j["rounds"] = rounds;
    j["local_epochs"] = local_epochs;
    j["eta"] = eta;
    j["batch_size"] = batch_size;
    j["mode"] = flavor == fedcore::UpdateFlavor::Full ? "full" : "adapter";
    j["fed_lora"] = {{"alpha", fed_lora.alpha}, {"dropout", fed_lora.dropout}, {"r", fed_lora.r}};
    j["model"] = {{"d_model", model.d_model},
                  {"d_ff", model.d_ff},
                  {"max_len", model.max_len},
                  {"n_classes", model.n_classes},
                  {"vocab", model.vocab}};
    j["forget_client"] = forget_client;
    j["forget_balance"] = forget_balance;
    j["forget_fraction"] = forget_fraction;
    j["digest_only_payloads"] = digest_only_payloads;
    j["unlearn"] = {{"batch_size", unlearn_batch},
                    {"clip", unlearn_clip},
                    {"e_u", unlearn_epochs},
                    {"eta", unlearn_eta},
                    {"lora",
                     {{"alpha", unlearn_lora.alpha},
                      {"dropout", unlearn_lora.dropout},
                      {"r", unlearn_lora.r}}},
                    {"stop_forget_acc",
                     stop_forget_acc ? nlohmann::json(*stop_forget_acc) : nlohmann::json()}};
    j["criteria"] = criteria.to_json();
    j["seed"] = seed;
    j["latency"] = {{"consensus_s", latency.consensus_s},
                    {"epoch_s", latency.epoch_s},
                    {"name", latency.name},
                    {"setup_s", latency.setup_s},
                    {"tx_s", latency.tx_s}};
    j["corpus"] = corpus.type == CorpusSource::Type::Synthetic
                      ? nlohmann::json{{"type", "synthetic"}}
                      : nlohmann::json{{"type", "csv"},
                                       {"path", corpus.path},
                                       {"text_column", corpus.text_column},
                                       {"label_column", corpus.label_column}};
    j["val_samples"] = val_samples;
    j["token_ttl_s"] = token_ttl_s;
    return j;
  }

  static ScenarioConfig from_json(const nlohmann::json& j) {
    ScenarioConfig c;
    c.n_clients = j.value("n_clients", c.n_clients);
    c.samples_per_client = j.value("samples_per_client", c.samples_per_client);
    c.rounds = j.value("rounds", c.rounds);
    c.local_epochs = j.value("local_epochs", c.local_epochs);
    c.eta = j.value("eta", c.eta);
    c.batch_size = j.value("batch_size", c.batch_size);
    std::string mode = j.value("mode", std::string("full"));
    c.flavor = mode == "adapter" ? fedcore::UpdateFlavor::Adapter : fedcore::UpdateFlavor::Full;
    if (j.contains("fed_lora")) {
      c.fed_lora.r = j["fed_lora"].value("r", c.fed_lora.r);
      c.fed_lora.alpha = j["fed_lora"].value("alpha", c.fed_lora.alpha);
      c.fed_lora.dropout = j["fed_lora"].value("dropout", c.fed_lora.dropout);
    }
    if (j.contains("model")) {
      c.model.d_model = j["model"].value("d_model", c.model.d_model);
      c.model.d_ff = j["model"].value("d_ff", c.model.d_ff);
      c.model.max_len = j["model"].value("max_len", c.model.max_len);
      c.model.n_classes = j["model"].value("n_classes", c.model.n_classes);
      c.model.vocab = j["model"].value("vocab", c.model.vocab);
    }
    c.forget_client = j.value("forget_client", c.forget_client);
    c.forget_balance = j.value("forget_balance", c.forget_balance);
    c.forget_fraction = j.value("forget_fraction", c.forget_fraction);
    c.digest_only_payloads = j.value("digest_only_payloads", c.digest_only_payloads);
    if (j.contains("unlearn")) {
      const auto& u = j["unlearn"];
      c.unlearn_epochs = u.value("e_u", c.unlearn_epochs);
      c.unlearn_eta = u.value("eta", c.unlearn_eta);
      c.unlearn_clip = u.value("clip", c.unlearn_clip);
      c.unlearn_batch = u.value("batch_size", c.unlearn_batch);
      if (u.contains("lora")) {
        c.unlearn_lora.r = u["lora"].value("r", c.unlearn_lora.r);
        c.unlearn_lora.alpha = u["lora"].value("alpha", c.unlearn_lora.alpha);
        c.unlearn_lora.dropout = u["lora"].value("dropout", c.unlearn_lora.dropout);
      }
      if (u.contains("stop_forget_acc") && !u["stop_forget_acc"].is_null())
        c.stop_forget_acc = u["stop_forget_acc"].get<double>();
    }
    if (j.contains("criteria")) {
      c.criteria.tau_forget = j["criteria"].value("tau_forget", c.criteria.tau_forget);
      if (j["criteria"].contains("delta_retain") && !j["criteria"]["delta_retain"].is_null())
        c.criteria.delta_retain = j["criteria"]["delta_retain"].get<double>();
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("latency")) {
      if (j["latency"].is_string()) {
        auto p = LatencyProfile::by_name(j["latency"].get<std::string>());
        if (p) c.latency = *p;
      } else {
        c.latency.name = j["latency"].value("name", c.latency.name);
        c.latency.setup_s = j["latency"].value("setup_s", c.latency.setup_s);
        c.latency.consensus_s = j["latency"].value("consensus_s", c.latency.consensus_s);
        c.latency.tx_s = j["latency"].value("tx_s", c.latency.tx_s);
        c.latency.epoch_s = j["latency"].value("epoch_s", c.latency.epoch_s);
      }
    }
    if (j.contains("corpus") && j["corpus"].value("type", std::string()) == "csv") {
      c.corpus.type = CorpusSource::Type::Csv;
      c.corpus.path = j["corpus"].value("path", std::string());
      c.corpus.text_column = j["corpus"].value("text_column", std::string("text"));
      c.corpus.label_column = j["corpus"].value("label_column", std::string("label"));
    }
    c.val_samples = j.value("val_samples", c.val_samples);
    c.token_ttl_s = j.value("token_ttl_s", c.token_ttl_s);
    return c;
  }
};

inline std::string client_name(std::size_t index) { return "c" + std::to_string(index + 1); }

// Per-client datasets plus a held-out validation set.
struct ScenarioData {
  std::vector<std::vector<Example>> client_data;
  std::vector<Example> validation;
};

inline ScenarioData build_datasets(const ScenarioConfig& cfg) {
  ScenarioData data;
  if (cfg.corpus.type == CorpusSource::Type::Synthetic) {
    for (std::size_t i = 0; i < cfg.n_clients; ++i) {
      double balance =
          client_name(i) == cfg.forget_client ? cfg.forget_balance : cfg.retain_balance();
      data.client_data.push_back(corpus::generate_corpus(
          mix64(cfg.seed, 0xC0, i), cfg.samples_per_client, balance));
    }
    data.validation =
        corpus::generate_corpus(mix64(cfg.seed, 0xDA7A), cfg.val_samples, 0.5);
  } else {
    auto all = corpus::load_csv_corpus(cfg.corpus.path, cfg.corpus.text_column,
                                       cfg.corpus.label_column, cfg.corpus.limit);
    std::size_t need = cfg.n_clients * cfg.samples_per_client + cfg.val_samples;
    if (all.size() < need)
      throw ModuleError("CorpusTooSmall", "csv corpus has " + std::to_string(all.size()) +
                                              " rows, need " + std::to_string(need));
    std::size_t pos = 0;
    for (std::size_t i = 0; i < cfg.n_clients; ++i) {
      data.client_data.emplace_back(all.begin() + pos,
                                    all.begin() + pos + cfg.samples_per_client);
      pos += cfg.samples_per_client;
    }
    data.validation.assign(all.begin() + pos, all.begin() + pos + cfg.val_samples);
  }
  return data;
}

struct ScenarioResult {
  std::string status = "Ok";  // or a module error name, e.g. CriteriaNotMet
  std::vector<fedcore::RoundReport> rounds;
  std::optional<unlearner::UnlearnReport> unlearn_report;
  std::optional<unlearner::Verdict> verdict;
  bool unlearn_base_intact = true;  // global model bytes unchanged by unlearning
  Digest unlearn_t_id{};
  std::string metrics_csv;
  std::string unlearn_csv;
  std::string ledger_jsonl;
  std::string final_model_digest_hex;
  std::uint64_t final_version = 0;
  double sim_end_s = 0.0;
  std::size_t train_gradient_steps = 0;
  std::size_t unlearn_gradient_steps = 0;
  std::size_t registered = 0;

  void write_artifacts(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const std::string& body) {
      std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError(std::string("cannot write ") + name);
      out << body;
    };
    write("metrics.csv", metrics_csv);
    write("unlearn.csv", unlearn_csv);
    write("ledger.jsonl", ledger_jsonl);
  }
};

inline std::string unlearn_csv_header() {
  return "r,alpha,dropout,seed,e_u,acc_forget_before,acc_forget_after,acc_retain_before,"
         "acc_retain_after,loss_val,sim_time_s\n";
}

inline std::string unlearn_csv_row(const unlearner::UnlearnReport& rep, std::uint64_t seed,
                                   double sim_time_s) {
  std::string row;
  row += std::to_string(rep.lora.r) + ",";
  row += fmt_double(rep.lora.alpha) + ",";
  row += fmt_double(rep.lora.dropout) + ",";
  row += std::to_string(seed) + ",";
  row += std::to_string(rep.epochs_run) + ",";
  row += fmt_double(rep.acc_forget_before) + ",";
  row += fmt_double(rep.acc_forget_after) + ",";
  row += fmt_double(rep.acc_retain_before) + ",";
  row += fmt_double(rep.acc_retain_after) + ",";
  row += fmt_double(rep.loss_val_after) + ",";
  row += fmt_double(sim_time_s) + "\n";
  return row;
}

// Executes the numbered protocol: (1) client register, (2) model upload and
// federated training, (3) aggregation per round, (4) LoRA unlearning,
// (5) verification and result submission.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  if (cfg.n_clients < 1 || cfg.rounds < 1 || cfg.samples_per_client < 2)
    throw ModuleError("BadConfig", "need n_clients >= 1, rounds >= 1, samples >= 2");
  ScenarioResult result;
  ScenarioData data = build_datasets(cfg);

  fedcore::SimClock clock;
  clock.tx_s = cfg.latency.tx_s;
  clock.epoch_s = cfg.latency.epoch_s;
  clock.advance(cfg.latency.setup_s);
  clock.advance(cfg.latency.consensus_s);

  identity::UserPool pool(cfg.seed ^ 0x1d9a11u, cfg.token_ttl_s);
  ledger::ChainState chain;
  chaincode::State cc;
  cc.digest_only_payloads = cfg.digest_only_payloads;

  // (1) registration: agent plus every client, one Register tx each
  auto agent_reg = identity::register_client(pool, chain, "agent", identity::Role::Agent,
                                             clock.now_s);
  clock.tick_tx();
  std::vector<fedcore::ClientState> clients;
  for (std::size_t i = 0; i < cfg.n_clients; ++i) {
    auto reg = identity::register_client(pool, chain, client_name(i), identity::Role::Client,
                                         clock.now_s);
    clock.tick_tx();
    fedcore::ClientState st;
    st.c_id = client_name(i);
    st.token = reg.token;
    st.pair = reg.pair;
    st.dataset = data.client_data[i];
    clients.push_back(std::move(st));
    ++result.registered;
  }

  // (2) initial global model
  tinylm::ModelConfig model_cfg = cfg.model;
  model_cfg.seed = cfg.seed;
  Rng init_rng(mix64(cfg.seed, 0x90de));
  tinylm::Model global;
  global.config = model_cfg;
  global.weights = tinylm::Weights::init(model_cfg, init_rng);
  if (cfg.flavor == fedcore::UpdateFlavor::Adapter)
    global.adapter = tinylm::LoraAdapter::init(model_cfg, cfg.fed_lora, init_rng);

  auto upload = cc.upload_global_model(pool, chain, agent_reg.token, global.serialize(),
                                       clock.now_s);
  if (upload.status != chaincode::Status::Ok) {
    result.status = std::string(chaincode::to_string(upload.status));
    return result;
  }
  clock.tick_tx();

  // (3) federated rounds
  std::string metrics =
      "round,client,loss,acc,global_acc,submit_t_id,aggregate_t_id,sim_time_s\n";
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    fedcore::RoundConfig rcfg;
    rcfg.round = round;
    rcfg.train.epochs = cfg.local_epochs;
    rcfg.train.eta = cfg.eta;
    rcfg.train.batch_size = cfg.batch_size;
    rcfg.train.flavor = cfg.flavor;
    rcfg.validation = data.validation;
    rcfg.seed = cfg.seed;
    auto report = fedcore::run_round(clients, pool, chain, cc, agent_reg.token, global, rcfg,
                                     clock);
    result.train_gradient_steps += report.gradient_steps;
    for (const auto& entry : report.clients) {
      metrics += std::to_string(round) + "," + entry.c_id + "," + fmt_double(entry.loss) +
                 "," + fmt_double(entry.accuracy) + "," +
                 fmt_double(report.global_val_accuracy) + "," +
                 (entry.skipped ? std::string() : to_hex(entry.t_id)) + "," +
                 (report.aggregated ? to_hex(report.aggregation_t_id) : std::string()) + "," +
                 fmt_double(clock.now_s) + "\n";
    }
    result.rounds.push_back(std::move(report));
  }

  // (4) unlearning request from the forget client
  auto forget_it = std::find_if(clients.begin(), clients.end(), [&](const auto& c) {
    return c.c_id == cfg.forget_client;
  });
  std::string unlearn_rows = unlearn_csv_header();
  if (forget_it != clients.end()) {
    std::size_t forget_n = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.forget_fraction *
                                    static_cast<double>(forget_it->dataset.size())));
    forget_n = std::min(forget_n, forget_it->dataset.size());
    std::vector<Example> d_forget(forget_it->dataset.begin(),
                                  forget_it->dataset.begin() + forget_n);
    unlearner::ForgetRequest request;
    request.requester = forget_it->c_id;
    request.d_forget = d_forget;
    request.e_u = cfg.unlearn_epochs;
    request.eta = cfg.unlearn_eta;
    request.lora = cfg.unlearn_lora;
    request.base_version = cc.global()->version;
    request.seed = mix64(cfg.seed, 0xF0461);
    request.ascent_clip = cfg.unlearn_clip;
    request.batch_size = cfg.unlearn_batch;
    request.stop_forget_acc = cfg.stop_forget_acc;

    Bytes global_before = global.serialize();
    auto report = unlearner::unlearn(global, request, data.validation);
    result.unlearn_base_intact = global.serialize() == global_before;
    result.unlearn_gradient_steps = report.steps_run;
    clock.tick_epochs(report.epochs_run);

    // (5) verification and submission
    unlearner::ValidationData validation;
    validation.forget = d_forget;
    validation.retain = data.validation;
    validation.retain_baseline_acc =
        result.rounds.empty() ? 0.0 : result.rounds.back().global_val_accuracy;
    auto commit = cc.commit_unlearning_result(pool, chain, forget_it->token, report,
                                              cfg.criteria, validation, clock.now_s);
    result.verdict = commit.verdict;
    result.unlearn_report = report;
    unlearn_rows += unlearn_csv_row(report, cfg.seed, clock.now_s);
    if (commit.status == chaincode::Status::Ok) {
      clock.tick_tx();
      clock.tick_tx();
      result.unlearn_t_id = commit.t_id;
    } else {
      result.status = std::string(chaincode::to_string(commit.status));
    }
  }

  result.metrics_csv = std::move(metrics);
  result.unlearn_csv = std::move(unlearn_rows);
  result.ledger_jsonl = chain.export_jsonl();
  result.final_model_digest_hex = to_hex(cc.global()->weights_digest);
  result.final_version = cc.global()->version;
  result.sim_end_s = clock.now_s;
  return result;
}

struct SweepGrid {
  std::vector<std::size_t> r{8};
  std::vector<double> alpha{4.0};
  std::vector<double> dropout{0.3};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  static SweepGrid from_json(const nlohmann::json& j) {
    SweepGrid g;
    if (j.contains("r")) g.r = j["r"].get<std::vector<std::size_t>>();
    if (j.contains("alpha")) g.alpha = j["alpha"].get<std::vector<double>>();
    if (j.contains("dropout")) g.dropout = j["dropout"].get<std::vector<double>>();
    if (j.contains("seeds")) g.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    return g;
  }
};

struct SweepRow {
  std::size_t r = 0;
  double alpha = 0.0;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  unlearner::UnlearnReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  unlearner::RetrainResult retrain;
  double retrain_initial_forget_acc = 0.0;  // trained-model forget accuracy, mean over seeds
  std::string csv;
};

// Per seed: one federated training (model cached), then an unlearning run per
// grid cell; plus one retrain-from-scratch baseline on the retained shards
// with the forget set evaluated under anti-correlated labels.
inline SweepResult run_sweep(const ScenarioConfig& base, const SweepGrid& grid) {
  SweepResult result;
  std::string csv = unlearn_csv_header();

  tinylm::TrainOptions opt;
  opt.epochs = base.local_epochs;
  opt.eta = base.eta;
  opt.batch_size = base.batch_size;
  opt.trainable = tinylm::Trainable::AllWeights;

  double initial_sum = 0.0;
  for (std::uint64_t seed : grid.seeds) {
    ScenarioConfig cfg = base;
    cfg.seed = seed;
    ScenarioData data = build_datasets(cfg);

    tinylm::ModelConfig model_cfg = cfg.model;
    model_cfg.seed = seed;

    std::vector<unlearner::RetainShard> shards;
    for (std::size_t i = 0; i < cfg.n_clients; ++i)
      shards.push_back({client_name(i), data.client_data[i]});

    Rng train_rng(mix64(seed, 0x7124149));
    auto trained = unlearner::retrain_baseline(shards, model_cfg, cfg.rounds, opt,
                                               data.client_data[0], data.validation, train_rng);
    initial_sum += trained.forget_acc;

    tinylm::Model global;
    global.config = model_cfg;
    global.weights = trained.weights;

    std::size_t forget_idx = 0;
    for (std::size_t i = 0; i < cfg.n_clients; ++i)
      if (client_name(i) == cfg.forget_client) forget_idx = i;

    for (std::size_t r : grid.r)
      for (double alpha : grid.alpha)
        for (double dropout : grid.dropout) {
          unlearner::ForgetRequest request;
          request.requester = cfg.forget_client;
          request.d_forget = data.client_data[forget_idx];
          request.e_u = cfg.unlearn_epochs;
          request.eta = cfg.unlearn_eta;
          request.lora = tinylm::LoraConfig{r, alpha, dropout, true, true};
          request.base_version = 0;
          request.seed = mix64(seed, r, static_cast<std::uint64_t>(alpha * 1000),
                               static_cast<std::uint64_t>(dropout * 1000));
          request.ascent_clip = cfg.unlearn_clip;
          request.batch_size = cfg.unlearn_batch;
          request.stop_forget_acc = cfg.stop_forget_acc;
          auto report = unlearner::unlearn(global, request, data.validation);
          csv += unlearn_csv_row(report, seed, 0.0);
          result.rows.push_back({r, alpha, dropout, seed, std::move(report)});
        }
  }
  result.retrain_initial_forget_acc = initial_sum / static_cast<double>(grid.seeds.size());

  // Retrain-from-scratch comparison on the first seed: train on retained
  // shards only, evaluate the forget set with labels flipped relative to the
  // planted rule (the erased data is what the retrained model never saw).
  {
    ScenarioConfig cfg = base;
    cfg.seed = grid.seeds.front();
    ScenarioData data = build_datasets(cfg);
    std::vector<unlearner::RetainShard> shards;
    std::size_t forget_idx = 0;
    for (std::size_t i = 0; i < cfg.n_clients; ++i) {
      if (client_name(i) == cfg.forget_client) {
        forget_idx = i;
        continue;
      }
      shards.push_back({client_name(i), data.client_data[i]});
    }
    auto flipped = corpus::flip_labels(data.client_data[forget_idx]);
    Rng rng(mix64(cfg.seed, 0x2e72a14));
    result.retrain = unlearner::retrain_baseline(shards, cfg.model, cfg.rounds, opt, flipped,
                                                 data.validation, rng);
  }

  result.csv = std::move(csv);
  return result;
}

struct ReportFiles {
  std::string sweep_csv;
  std::string by_alpha_csv;
  std::string by_dropout_csv;
  std::string by_r_csv;
  std::string summary_csv;
  std::string trends_csv;
};

// Sweep CSV grouped by each hyperparameter (the box-plot groupings) plus a
// summary table with the retrain-from-scratch row alongside.
inline ReportFiles emit_report(const SweepResult& sweep) {
  ReportFiles out;
  out.sweep_csv = sweep.csv;

  auto grouped = [&](auto key_of, const std::string& key_name) {
    std::string csv = key_name + ",seed,acc_forget_after\n";
    std::vector<const SweepRow*> rows;
    for (const auto& row : sweep.rows) rows.push_back(&row);
    std::stable_sort(rows.begin(), rows.end(), [&](const SweepRow* a, const SweepRow* b) {
      return key_of(*a) < key_of(*b);
    });
    for (const auto* row : rows)
      csv += fmt_double(key_of(*row)) + "," + std::to_string(row->seed) + "," +
             fmt_double(row->report.acc_forget_after) + "\n";
    return csv;
  };
  out.by_alpha_csv = grouped([](const SweepRow& r) { return r.alpha; }, "alpha");
  out.by_dropout_csv = grouped([](const SweepRow& r) { return r.dropout; }, "dropout");
  out.by_r_csv = grouped([](const SweepRow& r) { return static_cast<double>(r.r); }, "r");

  // Table rows: one per configuration (mean over seeds), then the baseline.
  std::map<std::tuple<std::size_t, double, double>, std::pair<double, double>> acc;
  std::map<std::tuple<std::size_t, double, double>, std::size_t> count;
  for (const auto& row : sweep.rows) {
    auto key = std::make_tuple(row.r, row.alpha, row.dropout);
    acc[key].first += row.report.acc_forget_before;
    acc[key].second += row.report.acc_forget_after;
    count[key] += 1;
  }
  // per-hyperparameter mean final accuracy, reported (not asserted) so the
  // direction of each trend is inspectable at a glance
  std::string trends = "parameter,value,mean_acc_forget_after,n\n";
  auto trend_of = [&](auto key_of, const std::string& name) {
    std::map<double, std::pair<double, std::size_t>> buckets;
    for (const auto& row : sweep.rows) {
      auto& b = buckets[key_of(row)];
      b.first += row.report.acc_forget_after;
      b.second += 1;
    }
    for (const auto& [value, b] : buckets)
      trends += name + "," + fmt_double(value) + "," +
                fmt_double(b.first / static_cast<double>(b.second)) + "," +
                std::to_string(b.second) + "\n";
  };
  trend_of([](const SweepRow& r) { return r.alpha; }, "alpha");
  trend_of([](const SweepRow& r) { return r.dropout; }, "dropout");
  trend_of([](const SweepRow& r) { return static_cast<double>(r.r); }, "r");
  out.trends_csv = std::move(trends);

  std::string summary = "method,r,alpha,dropout,initial_accuracy,final_accuracy\n";
  for (const auto& [key, sums] : acc) {
    double n = static_cast<double>(count[key]);
    summary += "lora_unlearn," + std::to_string(std::get<0>(key)) + "," +
               fmt_double(std::get<1>(key)) + "," + fmt_double(std::get<2>(key)) + "," +
               fmt_double(sums.first / n) + "," + fmt_double(sums.second / n) + "\n";
  }
  summary += "retrain_from_scratch,,,," + fmt_double(sweep.retrain_initial_forget_acc) + "," +
             fmt_double(sweep.retrain.forget_acc) + "\n";
  out.summary_csv = std::move(summary);
  return out;
}

inline void write_report_files(const ReportFiles& files, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(std::string("cannot write ") + name);
    out << body;
  };
  write("sweep.csv", files.sweep_csv);
  write("by_alpha.csv", files.by_alpha_csv);
  write("by_dropout.csv", files.by_dropout_csv);
  write("by_r.csv", files.by_r_csv);
  write("summary.csv", files.summary_csv);
  write("trends.csv", files.trends_csv);
}

}  // namespace fedchain::bench
