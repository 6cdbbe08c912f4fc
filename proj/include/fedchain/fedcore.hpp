#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedchain/chaincode.hpp"
#include "fedchain/identity.hpp"
#include "fedchain/params.hpp"
#include "fedchain/tinylm.hpp"

// Federated training: local client SGD plus sample-weighted aggregation.
// Raw client data never leaves ClientState; only parameter deltas travel.

namespace fedchain::fedcore {

using tinylm::Example;
using tinylm::Model;
using tinylm::TokenizedExample;

// Simulated time. Latency constants come from the bench profile; nothing here
// ever sleeps.
struct SimClock {
  double now_s = 0.0;
  double tx_s = 0.0;
  double epoch_s = 0.0;

  void tick_tx() { now_s += tx_s; }
  void tick_epochs(std::size_t n) { now_s += epoch_s * static_cast<double>(n); }
  void advance(double dt) { now_s += dt; }
};

struct ClientState {
  std::string c_id;
  identity::AuthToken token;
  identity::KeyPair pair;
  std::vector<Example> dataset;

  std::size_t sample_count() const { return dataset.size(); }

  const std::vector<TokenizedExample>& tokenized(const tinylm::ModelConfig& c) const {
    if ((tokenized_cache_.empty() || cache_max_len_ != c.max_len) && !dataset.empty()) {
      tokenized_cache_ = tinylm::tokenize_dataset(dataset, c);
      cache_max_len_ = c.max_len;
    }
    return tokenized_cache_;
  }
  void invalidate_cache() { tokenized_cache_.clear(); }

 private:
  mutable std::vector<TokenizedExample> tokenized_cache_;
  mutable std::size_t cache_max_len_ = 0;
};

enum class UpdateFlavor { Adapter, Full };

inline std::string_view to_string(UpdateFlavor f) {
  return f == UpdateFlavor::Adapter ? "adapter" : "full";
}

struct LocalUpdate {
  std::vector<double> delta;
  UpdateFlavor flavor = UpdateFlavor::Adapter;
  std::size_t sample_count = 0;
  std::size_t steps = 0;
  double loss = 0.0;      // mean training loss over the last epoch's batches
  double accuracy = 0.0;  // local accuracy on the client's own data
};

struct TrainSpec {
  std::size_t epochs = 1;
  double eta = 0.5;
  std::size_t batch_size = 16;
  UpdateFlavor flavor = UpdateFlavor::Adapter;  // adapter deltas by default
  std::optional<double> clip_norm = 5.0;
};

namespace detail {

inline std::vector<double> flatten_for(const Model& m, UpdateFlavor flavor) {
  if (flavor == UpdateFlavor::Adapter) {
    if (!m.adapter) throw ShapeMismatchError("adapter update requested with no adapter");
    return m.adapter->flatten();
  }
  auto flat = m.weights.flatten();
  if (m.adapter) {
    auto extra = m.adapter->flatten();
    flat.insert(flat.end(), extra.begin(), extra.end());
  }
  return flat;
}

inline void unflatten_into(Model& m, UpdateFlavor flavor, std::span<const double> flat) {
  if (flavor == UpdateFlavor::Adapter) {
    m.adapter->unflatten(flat);
    return;
  }
  std::size_t base_n = m.weights.param_count();
  m.weights.unflatten(flat.subspan(0, base_n));
  if (m.adapter) m.adapter->unflatten(flat.subspan(base_n));
}

}  // namespace detail

// Copies the global model, runs `epochs` of mini-batch descent on the
// client's private dataset, and returns only the parameter delta.
inline LocalUpdate local_train(const ClientState& client, const Model& global,
                               const TrainSpec& spec, Rng& rng,
                               std::uint64_t dropout_seed = 0) {
  if (client.dataset.empty()) throw EmptyDatasetError("client " + client.c_id + " has no data");

  Model local = global;
  auto before = detail::flatten_for(local, spec.flavor);

  LocalUpdate out;
  out.flavor = spec.flavor;
  out.sample_count = client.sample_count();

  const auto& data = client.tokenized(global.config);
  if (spec.epochs > 0) {
    tinylm::TrainOptions opt;
    opt.epochs = spec.epochs;
    opt.eta = spec.eta;
    opt.batch_size = spec.batch_size;
    opt.clip_norm = spec.clip_norm;
    opt.trainable = spec.flavor == UpdateFlavor::Adapter ? tinylm::Trainable::AdaptersOnly
                                                         : tinylm::Trainable::AllWeights;
    out.steps = tinylm::sgd_train(local.weights,
                                  local.adapter ? &*local.adapter : nullptr, local.config,
                                  data, opt, rng, dropout_seed);
  }

  auto eval = [&](const Model& m) {
    std::size_t correct = 0;
    double loss = 0.0;
    for (const auto& ex : data) {
      auto probs = tinylm::forward(m.weights, m.adapter ? &*m.adapter : nullptr, m.config,
                                   ex.tokens);
      std::size_t pred = 0;
      for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[pred]) pred = k;
      if (pred == static_cast<std::size_t>(ex.label)) ++correct;
      loss += -std::log(std::max(probs[static_cast<std::size_t>(ex.label)], 1e-300));
    }
    return std::pair<double, double>(loss / data.size(),
                                     static_cast<double>(correct) / data.size());
  };
  std::tie(out.loss, out.accuracy) = eval(local);

  out.delta = params::subtract(detail::flatten_for(local, spec.flavor), before);
  return out;
}

// Sample-weighted coordinate-wise mean, folded in sorted client order.
inline std::vector<double> aggregate(std::vector<params::WeightedUpdate> updates) {
  return params::weighted_mean(std::move(updates));
}

struct ClientRoundEntry {
  std::string c_id;
  double loss = 0.0;
  double accuracy = 0.0;
  std::string update_digest_hex;
  Digest t_id{};
  bool skipped = false;
  std::string skip_reason;
};

struct RoundReport {
  std::uint64_t round = 0;
  std::vector<ClientRoundEntry> clients;
  double global_val_accuracy = 0.0;
  double global_val_loss = 0.0;
  Digest aggregation_t_id{};
  std::uint64_t new_version = 0;
  std::size_t gradient_steps = 0;
  bool aggregated = false;
};

struct RoundConfig {
  std::uint64_t round = 0;
  TrainSpec train;
  std::vector<Example> validation;
  std::uint64_t seed = 0;
};

// One protocol round: distribute the global model, train each client locally,
// record every accepted update on the chain, aggregate in sorted client
// order, and commit the new global model. Clients failing auth are skipped
// and flagged rather than aborting the round.
inline RoundReport run_round(std::vector<ClientState>& clients, identity::UserPool& pool,
                             ledger::ChainState& chain, chaincode::State& cc,
                             const identity::AuthToken& agent_token, Model& global,
                             const RoundConfig& cfg, SimClock& clock) {
  RoundReport report;
  report.round = cfg.round;

  std::vector<std::size_t> order(clients.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return clients[a].c_id < clients[b].c_id;
  });

  clock.tick_epochs(cfg.train.epochs);

  std::vector<params::WeightedUpdate> accepted;
  for (std::size_t idx : order) {
    ClientState& client = clients[idx];
    ClientRoundEntry entry;
    entry.c_id = client.c_id;

    Rng crng(mix64(cfg.seed, cfg.round, idx));
    LocalUpdate update =
        local_train(client, global, cfg.train, crng, mix64(cfg.seed, cfg.round, idx, 0x7));
    entry.loss = update.loss;
    entry.accuracy = update.accuracy;
    report.gradient_steps += update.steps;

    CanonicalWriter w;
    for (double v : update.delta) w.f64(v);
    Bytes update_bytes = w.take();
    entry.update_digest_hex = to_hex(Sha256::digest(update_bytes));

    chaincode::State::SubmissionIn sub;
    sub.client = client.c_id;
    sub.round = cfg.round;
    sub.update = std::move(update_bytes);
    sub.flavor = std::string(to_string(update.flavor));
    sub.sample_count = update.sample_count;
    auto rec = cc.record_client_update(pool, chain, client.token, sub, clock.now_s);
    if (rec.status != chaincode::Status::Ok) {
      entry.skipped = true;
      entry.skip_reason = rec.error;
    } else {
      clock.tick_tx();
      entry.t_id = rec.t_id;
      accepted.push_back({client.c_id, std::move(update.delta), update.sample_count});
    }
    report.clients.push_back(std::move(entry));
  }

  if (!accepted.empty()) {
    auto released = cc.release_parameters_to_agent(pool, agent_token, cfg.round, clock.now_s);
    if (released.status == chaincode::Status::Ok) {
      auto delta = aggregate(std::move(accepted));
      auto flat = detail::flatten_for(global, cfg.train.flavor);
      params::add_in_place(flat, delta);
      detail::unflatten_into(global, cfg.train.flavor, flat);

      auto commit = cc.commit_aggregated_model(pool, chain, agent_token, global.serialize(),
                                               clock.now_s);
      if (commit.status == chaincode::Status::Ok) {
        clock.tick_tx();
        report.aggregation_t_id = commit.t_id;
        report.new_version = commit.version;
        report.aggregated = true;
      }
    }
  }

  if (!cfg.validation.empty()) {
    auto tok = tinylm::tokenize_dataset(cfg.validation, global.config);
    std::size_t correct = 0;
    double loss = 0.0;
    for (const auto& ex : tok) {
      auto probs = tinylm::forward(global.weights,
                                   global.adapter ? &*global.adapter : nullptr, global.config,
                                   ex.tokens);
      std::size_t pred = 0;
      for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[pred]) pred = k;
      if (pred == static_cast<std::size_t>(ex.label)) ++correct;
      loss += -std::log(std::max(probs[static_cast<std::size_t>(ex.label)], 1e-300));
    }
    report.global_val_accuracy = static_cast<double>(correct) / tok.size();
    report.global_val_loss = loss / tok.size();
  }
  return report;
}

}  // namespace fedchain::fedcore
