// fedchain command-line interface.
//
// A workspace directory holds the whole simulation: config.json, state.json
// (pool, chain, clients, clock), and the metrics CSVs. Subcommands drive the
// protocol step by step:
//
//   fedchain init [--workdir DIR] [--config FILE] [--seed N]
//   fedchain register --client-id c1 [--workdir DIR]
//   fedchain train --rounds N [--epochs K] [--eta F] [--workdir DIR]
//   fedchain unlearn --client-id c1 [--eu N] [--eta F] [--lora r,alpha,dropout]
//   fedchain verify [--tau-forget F] [--delta-retain F] [--workdir DIR]
//   fedchain sweep --grid FILE [--config FILE] [--out DIR]
//   fedchain timecost --profile paper|zero [--iterations N] [--txs N]
//   fedchain export-ledger PATH [--workdir DIR]
//   fedchain report DIR
//
// Exit code 0 on success; on failure the module error name goes to stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fedchain/bench.hpp"
#include "fedchain/chaincode.hpp"
#include "fedchain/corpus.hpp"
#include "fedchain/fedcore.hpp"
#include "fedchain/identity.hpp"
#include "fedchain/ledger.hpp"
#include "fedchain/tinylm.hpp"
#include "fedchain/unlearner.hpp"

namespace fs = std::filesystem;
using namespace fedchain;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
}

std::string hex_of(std::span<const std::uint8_t> b) { return to_hex(b); }

// Everything a workspace session needs, reconstructible from state.json.
struct Workspace {
  fs::path dir;
  bench::ScenarioConfig config;
  fedcore::SimClock clock;
  std::uint64_t pool_master = 0;
  identity::UserPool pool{0};
  ledger::ChainState chain;
  chaincode::State cc;
  identity::AuthToken agent_token;
  identity::KeyPair agent_pair;
  std::vector<fedcore::ClientState> clients;  // registered clients only
  std::vector<std::vector<tinylm::Example>> shards;
  std::vector<tinylm::Example> validation;
  std::uint64_t next_round = 0;
  double last_val_acc = 0.0;  // retain baseline for the drop criterion
  json pending_report;  // last unlearn report awaiting verification
  std::string pending_requester;

  fs::path state_path() const { return dir / "state.json"; }
  fs::path metrics_path() const { return dir / "metrics.csv"; }
  fs::path unlearn_path() const { return dir / "unlearn.csv"; }

  tinylm::Model current_model() const {
    if (!cc.global()) throw ModuleError("NoGlobalModel", "run `train` first");
    return tinylm::deserialize_model(std::span<const std::uint8_t>(
        cc.global()->weights.data(), cc.global()->weights.size()));
  }

  void save() const {
    json st;
    st["config"] = config.to_json();
    st["clock"] = {{"epoch_s", clock.epoch_s}, {"now_s", clock.now_s}, {"tx_s", clock.tx_s}};
    st["pool_master"] = pool_master;
    st["next_round"] = next_round;
    st["last_val_acc"] = last_val_acc;

    json entries = json::object();
    for (const auto& [id, entry] : pool.entries()) {
      entries[id] = {{"p_k", hex_of({entry.p_k.data(), entry.p_k.size()})},
                     {"role", std::string(identity::to_string(entry.role))},
                     {"t_id", to_hex(entry.registration_t_id)}};
    }
    st["pool"] = std::move(entries);

    st["agent"] = {{"token", agent_token.encode()},
                   {"s_k", hex_of({agent_pair.s_k.data(), agent_pair.s_k.size()})},
                   {"p_k", hex_of({agent_pair.p_k.data(), agent_pair.p_k.size()})}};

    json jclients = json::array();
    for (const auto& c : clients) {
      jclients.push_back({{"c_id", c.c_id},
                          {"token", c.token.encode()},
                          {"s_k", hex_of({c.pair.s_k.data(), c.pair.s_k.size()})},
                          {"p_k", hex_of({c.pair.p_k.data(), c.pair.p_k.size()})}});
    }
    st["clients"] = std::move(jclients);

    auto dataset_json = [](const std::vector<tinylm::Example>& data) {
      json arr = json::array();
      for (const auto& ex : data) arr.push_back({{"label", ex.label}, {"text", ex.text}});
      return arr;
    };
    json jshards = json::array();
    for (const auto& s : shards) jshards.push_back(dataset_json(s));
    st["shards"] = std::move(jshards);
    st["validation"] = dataset_json(validation);

    json blocks = json::array();
    auto tx_json = [](const ledger::Transaction& tx) {
      return json{{"kind", std::string(ledger::to_string(tx.kind))},
                  {"payload", to_hex(std::span<const std::uint8_t>(tx.payload.data(),
                                                                   tx.payload.size()))},
                  {"sim_time_s", tx.sim_time_s},
                  {"submitter", tx.submitter},
                  {"t_id", to_hex(tx.t_id)}};
    };
    for (const auto& b : chain.blocks()) {
      json jb = {{"index", b.index},
                 {"prev_hash", to_hex(b.prev_hash)},
                 {"block_hash", to_hex(b.block_hash)}};
      json txs = json::array();
      for (const auto& tx : b.transactions) txs.push_back(tx_json(tx));
      jb["transactions"] = std::move(txs);
      blocks.push_back(std::move(jb));
    }
    st["chain"] = std::move(blocks);
    st["pending_report"] = pending_report;
    st["pending_requester"] = pending_requester;

    spit(state_path(), st.dump(2) + "\n");
  }

  static Workspace load(const fs::path& dir) {
    Workspace ws;
    ws.dir = dir;
    json st = json::parse(slurp(ws.state_path()));
    ws.config = bench::ScenarioConfig::from_json(st.at("config"));
    ws.clock.now_s = st["clock"]["now_s"].get<double>();
    ws.clock.tx_s = st["clock"]["tx_s"].get<double>();
    ws.clock.epoch_s = st["clock"]["epoch_s"].get<double>();
    ws.pool_master = st["pool_master"].get<std::uint64_t>();
    ws.next_round = st["next_round"].get<std::uint64_t>();
    ws.last_val_acc = st.value("last_val_acc", 0.0);
    ws.pool = identity::UserPool(ws.pool_master, ws.config.token_ttl_s);

    for (auto it = st["pool"].begin(); it != st["pool"].end(); ++it) {
      identity::PoolEntry entry;
      auto pk = from_hex(it.value().at("p_k").get<std::string>());
      std::copy(pk->begin(), pk->end(), entry.p_k.begin());
      entry.role = *identity::role_from_string(it.value().at("role").get<std::string>());
      entry.registration_t_id = *digest_from_hex(it.value().at("t_id").get<std::string>());
      ws.pool.insert(it.key(), entry);
    }

    auto read_pair = [](const json& j) {
      identity::KeyPair pair;
      auto sk = from_hex(j.at("s_k").get<std::string>());
      auto pk = from_hex(j.at("p_k").get<std::string>());
      std::copy(sk->begin(), sk->end(), pair.s_k.begin());
      std::copy(pk->begin(), pk->end(), pair.p_k.begin());
      return pair;
    };
    ws.agent_token = *identity::AuthToken::decode(st["agent"]["token"].get<std::string>());
    ws.agent_pair = read_pair(st["agent"]);

    auto read_dataset = [](const json& arr) {
      std::vector<tinylm::Example> data;
      for (const auto& ex : arr)
        data.push_back({ex.at("text").get<std::string>(), ex.at("label").get<int>()});
      return data;
    };
    for (const auto& s : st["shards"]) ws.shards.push_back(read_dataset(s));
    ws.validation = read_dataset(st["validation"]);

    std::vector<ledger::Block> blocks;
    for (const auto& jb : st["chain"]) {
      ledger::Block b;
      b.index = jb.at("index").get<std::uint64_t>();
      b.prev_hash = *digest_from_hex(jb.at("prev_hash").get<std::string>());
      b.block_hash = *digest_from_hex(jb.at("block_hash").get<std::string>());
      for (const auto& jt : jb.at("transactions")) {
        ledger::Transaction tx;
        tx.kind = *ledger::kind_from_string(jt.at("kind").get<std::string>());
        tx.submitter = jt.at("submitter").get<std::string>();
        tx.payload = *from_hex(jt.at("payload").get<std::string>());
        tx.payload_digest = Sha256::digest(tx.payload);
        tx.sim_time_s = jt.at("sim_time_s").get<double>();
        tx.t_id = *digest_from_hex(jt.at("t_id").get<std::string>());
        b.transactions.push_back(std::move(tx));
      }
      blocks.push_back(std::move(b));
    }
    ws.chain = ledger::ChainState::from_parts(std::move(blocks), {});
    auto verdict = ws.chain.verify_chain();
    if (!verdict.valid)
      throw ModuleError("CorruptState", "stored chain fails verification at block " +
                                            std::to_string(verdict.first_bad_block));
    ws.cc = chaincode::State::restore_from_chain(ws.chain);

    for (const auto& jc : st["clients"]) {
      fedcore::ClientState c;
      c.c_id = jc.at("c_id").get<std::string>();
      c.token = *identity::AuthToken::decode(jc.at("token").get<std::string>());
      c.pair = read_pair(jc);
      std::size_t idx = 0;
      for (std::size_t i = 0; i < ws.config.n_clients; ++i)
        if (bench::client_name(i) == c.c_id) idx = i;
      c.dataset = ws.shards.at(idx);
      ws.clients.push_back(std::move(c));
    }
    ws.pending_report = st.value("pending_report", json());
    ws.pending_requester = st.value("pending_requester", std::string());
    return ws;
  }
};

int cmd_init(const fs::path& dir, const std::optional<fs::path>& config_file,
             std::optional<std::uint64_t> seed) {
  bench::ScenarioConfig cfg;
  if (config_file) cfg = bench::ScenarioConfig::from_json(json::parse(slurp(*config_file)));
  if (seed) cfg.seed = *seed;

  Workspace ws;
  ws.dir = dir;
  ws.config = cfg;
  fs::create_directories(dir);

  ws.clock.tx_s = cfg.latency.tx_s;
  ws.clock.epoch_s = cfg.latency.epoch_s;
  ws.clock.advance(cfg.latency.setup_s + cfg.latency.consensus_s);

  ws.pool_master = cfg.seed ^ 0x1d9a11u;
  ws.pool = identity::UserPool(ws.pool_master, cfg.token_ttl_s);

  auto data = bench::build_datasets(cfg);
  ws.shards = std::move(data.client_data);
  ws.validation = std::move(data.validation);

  auto agent = identity::register_client(ws.pool, ws.chain, "agent", identity::Role::Agent,
                                         ws.clock.now_s);
  ws.clock.tick_tx();
  ws.agent_token = agent.token;
  ws.agent_pair = agent.pair;

  spit(dir / "config.json", cfg.to_json().dump(2) + "\n");
  spit(ws.metrics_path(),
       "round,client,loss,acc,global_acc,submit_t_id,aggregate_t_id,sim_time_s\n");
  spit(ws.unlearn_path(), bench::unlearn_csv_header());
  ws.save();
  std::cout << "workspace initialized at " << dir.string() << " (seed " << cfg.seed << ", "
            << cfg.n_clients << " clients x " << cfg.samples_per_client << " samples)\n";
  return 0;
}

int cmd_register(const fs::path& dir, const std::string& client_id) {
  Workspace ws = Workspace::load(dir);
  bool known = false;
  for (std::size_t i = 0; i < ws.config.n_clients; ++i)
    if (bench::client_name(i) == client_id) known = true;
  if (!known)
    throw ModuleError("UnknownClient",
                      client_id + " is outside the configured client set c1..c" +
                          std::to_string(ws.config.n_clients));

  auto reg = identity::register_client(ws.pool, ws.chain, client_id, identity::Role::Client,
                                       ws.clock.now_s);
  if (reg.already_exists) {
    std::cerr << "AlreadyExists: " << client_id << " already registered\n";
    return 1;
  }
  ws.clock.tick_tx();
  fedcore::ClientState c;
  c.c_id = client_id;
  c.token = reg.token;
  c.pair = reg.pair;
  ws.clients.push_back(std::move(c));
  ws.save();
  std::cout << "registered " << client_id << " (tx " << to_hex(reg.t_id) << ")\n";
  return 0;
}

int cmd_train(const fs::path& dir, std::uint64_t rounds, std::optional<std::size_t> epochs,
              std::optional<double> eta, std::optional<std::size_t> batch) {
  Workspace ws = Workspace::load(dir);
  if (ws.clients.empty())
    throw ModuleError("NoClientsRegistered", "register clients before training");

  tinylm::Model global;
  if (!ws.cc.global()) {
    tinylm::ModelConfig mc = ws.config.model;
    mc.seed = ws.config.seed;
    Rng rng(mix64(ws.config.seed, 0x90de));
    global.config = mc;
    global.weights = tinylm::Weights::init(mc, rng);
    if (ws.config.flavor == fedcore::UpdateFlavor::Adapter)
      global.adapter = tinylm::LoraAdapter::init(mc, ws.config.fed_lora, rng);
    auto up = ws.cc.upload_global_model(ws.pool, ws.chain, ws.agent_token, global.serialize(),
                                        ws.clock.now_s);
    if (up.status != chaincode::Status::Ok) throw ModuleError("AuthError", up.error);
    ws.clock.tick_tx();
    std::cout << "uploaded initial global model (version 0)\n";
  } else {
    global = ws.current_model();
  }

  std::string metrics;
  for (std::uint64_t i = 0; i < rounds; ++i) {
    fedcore::RoundConfig rcfg;
    rcfg.round = ws.next_round;
    rcfg.train.epochs = epochs.value_or(ws.config.local_epochs);
    rcfg.train.eta = eta.value_or(ws.config.eta);
    rcfg.train.batch_size = batch.value_or(ws.config.batch_size);
    rcfg.train.flavor = ws.config.flavor;
    rcfg.validation = ws.validation;
    rcfg.seed = ws.config.seed;
    auto report = fedcore::run_round(ws.clients, ws.pool, ws.chain, ws.cc, ws.agent_token,
                                     global, rcfg, ws.clock);
    for (const auto& entry : report.clients) {
      metrics += std::to_string(report.round) + "," + entry.c_id + "," +
                 bench::fmt_double(entry.loss) + "," + bench::fmt_double(entry.accuracy) +
                 "," + bench::fmt_double(report.global_val_accuracy) + "," +
                 (entry.skipped ? std::string() : to_hex(entry.t_id)) + "," +
                 (report.aggregated ? to_hex(report.aggregation_t_id) : std::string()) + "," +
                 bench::fmt_double(ws.clock.now_s) + "\n";
    }
    std::cout << "round " << report.round << ": val acc "
              << bench::fmt_double(report.global_val_accuracy) << " (version "
              << report.new_version << ")\n";
    ws.last_val_acc = report.global_val_accuracy;
    ++ws.next_round;
  }

  std::ofstream out(ws.metrics_path(), std::ios::binary | std::ios::app);
  out << metrics;
  out.close();
  ws.save();
  return 0;
}

int cmd_unlearn(const fs::path& dir, const std::string& client_id,
                std::optional<std::size_t> eu, std::optional<double> eta,
                const std::string& lora_spec, std::optional<double> clip,
                std::optional<std::size_t> batch) {
  Workspace ws = Workspace::load(dir);
  auto it = std::find_if(ws.clients.begin(), ws.clients.end(),
                         [&](const auto& c) { return c.c_id == client_id; });
  if (it == ws.clients.end())
    throw ModuleError("UnknownClient", client_id + " is not registered");

  tinylm::LoraConfig lora = ws.config.unlearn_lora;
  if (!lora_spec.empty()) {
    std::stringstream ss(lora_spec);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, ',')) parts.push_back(part);
    if (parts.size() != 3)
      throw ModuleError("BadLoraSpec", "expected r,alpha,dropout, got \"" + lora_spec + "\"");
    lora.r = std::stoul(parts[0]);
    lora.alpha = std::stod(parts[1]);
    lora.dropout = std::stod(parts[2]);
  }

  unlearner::ForgetRequest request;
  request.requester = client_id;
  request.d_forget = it->dataset;
  request.e_u = eu.value_or(ws.config.unlearn_epochs);
  request.eta = eta.value_or(ws.config.unlearn_eta);
  request.lora = lora;
  request.base_version = ws.cc.global() ? ws.cc.global()->version : 0;
  request.seed = mix64(ws.config.seed, 0xF0461);
  request.ascent_clip = clip.value_or(ws.config.unlearn_clip);
  request.batch_size = batch.value_or(ws.config.unlearn_batch);
  request.stop_forget_acc = ws.config.stop_forget_acc;

  tinylm::Model global = ws.current_model();
  auto report = unlearner::unlearn(global, request, ws.validation);
  ws.clock.tick_epochs(report.epochs_run);
  ws.pending_report = report.to_json();
  ws.pending_requester = client_id;

  std::ofstream out(ws.unlearn_path(), std::ios::binary | std::ios::app);
  out << bench::unlearn_csv_row(report, ws.config.seed, ws.clock.now_s);
  out.close();
  ws.save();
  std::cout << "unlearning " << client_id << ": forget acc "
            << bench::fmt_double(report.acc_forget_before) << " -> "
            << bench::fmt_double(report.acc_forget_after) << " in " << report.epochs_run
            << " epochs (retain " << bench::fmt_double(report.acc_retain_after)
            << "); report pending verification\n";
  return 0;
}

int cmd_verify(const fs::path& dir, std::optional<double> tau,
               std::optional<double> delta_retain) {
  Workspace ws = Workspace::load(dir);
  if (ws.pending_report.is_null())
    throw ModuleError("NoPendingReport", "run `unlearn` before `verify`");

  tinylm::Model global = ws.current_model();
  auto report = unlearner::UnlearnReport::from_json(ws.pending_report, global.config);

  auto it = std::find_if(ws.clients.begin(), ws.clients.end(), [&](const auto& c) {
    return c.c_id == ws.pending_requester;
  });
  if (it == ws.clients.end())
    throw ModuleError("UnknownClient", "pending report's requester is not registered");
  const fedcore::ClientState& requester = *it;

  unlearner::VerificationCriteria criteria = ws.config.criteria;
  if (tau) criteria.tau_forget = *tau;
  if (delta_retain) criteria.delta_retain = *delta_retain;

  unlearner::ValidationData validation;
  validation.forget = requester.dataset;
  validation.retain = ws.validation;
  validation.retain_baseline_acc = ws.last_val_acc;

  auto commit = ws.cc.commit_unlearning_result(ws.pool, ws.chain, requester.token, report,
                                               criteria, validation, ws.clock.now_s);
  if (commit.status != chaincode::Status::Ok) {
    std::cerr << chaincode::to_string(commit.status) << ": " << commit.error;
    for (const auto& reason : commit.verdict.reasons) std::cerr << "; " << reason;
    std::cerr << " (recomputed forget acc " << bench::fmt_double(commit.verdict.forget_acc)
              << ")\n";
    return 1;
  }
  ws.clock.tick_tx();
  ws.clock.tick_tx();
  ws.pending_report = json();
  ws.pending_requester.clear();
  ws.save();
  std::cout << "verification passed (recomputed forget acc "
            << bench::fmt_double(commit.verdict.forget_acc) << "); T_id "
            << to_hex(commit.t_id) << "\n";
  return 0;
}

int cmd_sweep(const std::optional<fs::path>& config_file, const fs::path& grid_file,
              const fs::path& out_dir) {
  bench::ScenarioConfig cfg;
  if (config_file) cfg = bench::ScenarioConfig::from_json(json::parse(slurp(*config_file)));
  auto grid = bench::SweepGrid::from_json(json::parse(slurp(grid_file)));

  auto sweep = bench::run_sweep(cfg, grid);
  auto files = bench::emit_report(sweep);
  bench::write_report_files(files, out_dir);

  json retrain = {{"forget_acc", sweep.retrain.forget_acc},
                  {"gradient_steps", sweep.retrain.gradient_steps},
                  {"initial_forget_acc", sweep.retrain_initial_forget_acc},
                  {"retain_acc", sweep.retrain.retain_acc}};
  spit(out_dir / "retrain.json", retrain.dump(2) + "\n");
  std::cout << "sweep complete: " << sweep.rows.size() << " rows -> " << out_dir.string()
            << " (sweep.csv, by_alpha.csv, by_dropout.csv, by_r.csv, summary.csv, "
               "trends.csv)\n";
  return 0;
}

int cmd_timecost(const std::string& profile_name, std::size_t iterations, std::size_t txs) {
  auto profile = bench::LatencyProfile::by_name(profile_name);
  if (!profile) throw ModuleError("UnknownProfile", "expected paper or zero");
  auto tc = bench::time_cost_model(*profile, iterations, txs);
  std::cout << "profile=" << profile_name << " iterations=" << iterations << " txs=" << txs
            << "\nnormal_s=" << bench::fmt_double(tc.normal_s)
            << "\nenhanced_s=" << bench::fmt_double(tc.enhanced_s) << "\n";
  return 0;
}

int cmd_export_ledger(const fs::path& dir, const fs::path& out) {
  Workspace ws = Workspace::load(dir);
  spit(out, ws.chain.export_jsonl());
  std::cout << "exported " << ws.chain.blocks().size() << " blocks to " << out.string()
            << "\n";
  return 0;
}

int cmd_report(const fs::path& dir) {
  // Re-emit grouped CSVs and the summary from sweep.csv (+ retrain.json).
  std::ifstream in(dir / "sweep.csv");
  if (!in) throw IoError("no sweep.csv in " + dir.string());
  std::string line;
  std::getline(in, line);  // header
  bench::SweepResult sweep;
  sweep.csv = line + "\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    sweep.csv += line + "\n";
    std::stringstream ss(line);
    std::vector<std::string> cols;
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() < 11) throw IoError("malformed sweep.csv row: " + line);
    bench::SweepRow row;
    row.r = std::stoul(cols[0]);
    row.alpha = std::stod(cols[1]);
    row.dropout = std::stod(cols[2]);
    row.seed = std::stoull(cols[3]);
    row.report.lora = tinylm::LoraConfig{row.r, row.alpha, row.dropout, true, true};
    row.report.epochs_run = std::stoul(cols[4]);
    row.report.acc_forget_before = std::stod(cols[5]);
    row.report.acc_forget_after = std::stod(cols[6]);
    row.report.acc_retain_before = std::stod(cols[7]);
    row.report.acc_retain_after = std::stod(cols[8]);
    row.report.loss_val_after = std::stod(cols[9]);
    sweep.rows.push_back(std::move(row));
  }
  if (fs::exists(dir / "retrain.json")) {
    auto j = json::parse(slurp(dir / "retrain.json"));
    sweep.retrain.forget_acc = j.value("forget_acc", 0.0);
    sweep.retrain.retain_acc = j.value("retain_acc", 0.0);
    sweep.retrain.gradient_steps = j.value("gradient_steps", std::size_t{0});
    sweep.retrain_initial_forget_acc = j.value("initial_forget_acc", 0.0);
  }
  auto files = bench::emit_report(sweep);
  bench::write_report_files(files, dir);
  std::cout << "report emitted from " << sweep.rows.size() << " sweep rows into "
            << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedchain: ledger-audited federated training and LoRA unlearning simulator"};
  app.require_subcommand(1);

  std::string workdir = "fedchain_run";
  std::string config_file, grid_file, client_id, lora_spec, profile = "paper", out_path;
  std::uint64_t rounds = 1, seed_opt = 0;
  std::size_t iterations = 1, txs = 1;
  bool seed_given = false;
  std::optional<std::size_t> epochs, batch, eu;
  std::optional<double> eta, tau, delta_retain, clip;

  auto add_workdir = [&](CLI::App* sub) {
    sub->add_option("--workdir", workdir, "workspace directory");
  };

  auto* init = app.add_subcommand("init", "create a workspace and register the agent");
  add_workdir(init);
  init->add_option("--config", config_file, "scenario config JSON");
  init->add_option("--seed", seed_opt, "seed override");

  auto* reg = app.add_subcommand("register", "register a client on the ledger");
  add_workdir(reg);
  reg->add_option("--client-id", client_id, "client identifier, e.g. c1")->required();

  std::size_t epochs_v = 0, batch_v = 0, eu_v = 0;
  double eta_v = 0, tau_v = 0, dr_v = 0, clip_v = 0;

  auto* train = app.add_subcommand("train", "run federated training rounds");
  add_workdir(train);
  train->add_option("--rounds", rounds, "rounds to run")->required();
  train->add_option("--epochs", epochs_v, "local epochs per round");
  train->add_option("--eta", eta_v, "learning rate");
  train->add_option("--batch", batch_v, "mini-batch size");

  auto* unl = app.add_subcommand("unlearn", "run LoRA gradient-ascent unlearning");
  add_workdir(unl);
  unl->add_option("--client-id", client_id, "client whose data to forget")->required();
  unl->add_option("--eu", eu_v, "unlearning epochs");
  unl->add_option("--eta", eta_v, "ascent learning rate");
  unl->add_option("--lora", lora_spec, "adapter config r,alpha,dropout");
  unl->add_option("--clip", clip_v, "ascent gradient-norm clip");
  unl->add_option("--batch", batch_v, "ascent mini-batch size");

  auto* ver = app.add_subcommand("verify", "verify and submit the pending unlearning report");
  add_workdir(ver);
  ver->add_option("--tau-forget", tau_v, "max allowed forget accuracy");
  ver->add_option("--delta-retain", dr_v, "max allowed retain-accuracy drop");

  auto* sweep = app.add_subcommand("sweep", "hyperparameter sweep over LoRA configs");
  sweep->add_option("--grid", grid_file, "grid JSON: {r:[],alpha:[],dropout:[],seeds:[]}")
      ->required();
  sweep->add_option("--config", config_file, "scenario config JSON");
  std::string sweep_out = "sweep_out";
  sweep->add_option("--out", sweep_out, "output directory");

  auto* tc = app.add_subcommand("timecost", "blockchain time-cost model");
  tc->add_option("--profile", profile, "paper or zero");
  tc->add_option("--iterations", iterations, "training iterations");
  tc->add_option("--txs", txs, "transactions per iteration");

  auto* exp = app.add_subcommand("export-ledger", "write the chain as JSON Lines");
  add_workdir(exp);
  exp->add_option("path", out_path, "output file")->required();

  auto* rep = app.add_subcommand("report", "re-emit grouped CSVs and summary from a sweep");
  rep->add_option("dir", out_path, "sweep output directory")->required();

  CLI11_PARSE(app, argc, argv);

  seed_given = init->count("--seed") > 0;
  if (train->count("--epochs")) epochs = epochs_v;
  if (train->count("--batch") || unl->count("--batch")) batch = batch_v;
  if (train->count("--eta") || unl->count("--eta")) eta = eta_v;
  if (unl->count("--eu")) eu = eu_v;
  if (unl->count("--clip")) clip = clip_v;
  if (ver->count("--tau-forget")) tau = tau_v;
  if (ver->count("--delta-retain")) delta_retain = dr_v;

  try {
    if (init->parsed())
      return cmd_init(workdir,
                      config_file.empty() ? std::nullopt
                                          : std::optional<fs::path>(config_file),
                      seed_given ? std::optional<std::uint64_t>(seed_opt) : std::nullopt);
    if (reg->parsed()) return cmd_register(workdir, client_id);
    if (train->parsed()) return cmd_train(workdir, rounds, epochs, eta, batch);
    if (unl->parsed()) return cmd_unlearn(workdir, client_id, eu, eta, lora_spec, clip, batch);
    if (ver->parsed()) return cmd_verify(workdir, tau, delta_retain);
    if (sweep->parsed())
      return cmd_sweep(config_file.empty() ? std::nullopt
                                           : std::optional<fs::path>(config_file),
                       grid_file, sweep_out);
    if (tc->parsed()) return cmd_timecost(profile, iterations, txs);
    if (exp->parsed()) return cmd_export_ledger(workdir, out_path);
    if (rep->parsed()) return cmd_report(out_path);
  } catch (const ModuleError& e) {
    std::cerr << e.name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "Error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
