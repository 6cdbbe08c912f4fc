#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchain/bytes.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/params.hpp"
#include "fedchain/rng.hpp"
#include "fedchain/tinylm.hpp"

// LoRA-based forgetting: a fresh adapter is trained by gradient ascent on the
// forget set while the base weights stay frozen, then the adapter itself is
// the reported parameter delta. Verification re-derives every metric from the
// merged model; nothing in a submitted report is trusted.

namespace fedchain::unlearner {

using tinylm::Example;
using tinylm::LoraAdapter;
using tinylm::LoraConfig;
using tinylm::Model;
using tinylm::TokenizedExample;

struct VersionMismatchError : ModuleError {
  explicit VersionMismatchError(const std::string& msg) : ModuleError("VersionMismatch", msg) {}
};

struct EmptyForgetSetError : ModuleError {
  explicit EmptyForgetSetError(const std::string& msg) : ModuleError("EmptyForgetSet", msg) {}
};

struct ForgetRequest {
  std::string requester;
  std::vector<Example> d_forget;
  std::size_t e_u = 20;       // unlearning epochs
  double eta = 1e5;           // ascent learning rate
  LoraConfig lora;            // lambda: r, alpha, dropout
  std::uint64_t base_version = 0;
  std::uint64_t seed = 0;     // adapter init + batch order
  double ascent_clip = 1e-3;  // gradient-norm clip during ascent
  std::size_t batch_size = 32;
  std::optional<double> stop_forget_acc;  // early exit once reached
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

// Argmax accuracy and mean cross-entropy in eval mode.
inline EvalResult evaluate(const tinylm::Weights& w, const LoraAdapter* adapter,
                           const tinylm::ModelConfig& c,
                           std::span<const TokenizedExample> dataset) {
  if (dataset.empty()) throw EmptyDatasetError("evaluate requires data");
  EvalResult out;
  std::size_t correct = 0;
  for (const auto& ex : dataset) {
    auto probs = tinylm::forward(w, adapter, c, ex.tokens);
    std::size_t pred = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
      if (probs[k] > probs[pred]) pred = k;
    if (pred == static_cast<std::size_t>(ex.label)) ++correct;
    out.mean_loss += -std::log(std::max(probs[static_cast<std::size_t>(ex.label)], 1e-300));
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  out.mean_loss /= static_cast<double>(dataset.size());
  return out;
}

inline EvalResult evaluate(const Model& m, std::span<const TokenizedExample> dataset) {
  return evaluate(m.weights, m.adapter ? &*m.adapter : nullptr, m.config, dataset);
}

struct UnlearnReport {
  LoraConfig lora;
  LoraAdapter delta;  // the trained fresh adapter; its merged product is the weight delta
  double acc_forget_before = 0.0;
  double acc_forget_after = 0.0;
  double acc_retain_before = 0.0;
  double acc_retain_after = 0.0;
  double loss_val_after = 0.0;
  std::size_t epochs_run = 0;
  std::size_t steps_run = 0;
  std::uint64_t base_version = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["lora"] = {{"alpha", lora.alpha},
                 {"dropout", lora.dropout},
                 {"r", lora.r},
                 {"target_query", lora.target_query},
                 {"target_value", lora.target_value}};
    auto matrix_hex = [](const Matrix& m) {
      CanonicalWriter w;
      for (double v : m.data) w.f64(v);
      return to_hex(std::span<const std::uint8_t>(w.data().data(), w.data().size()));
    };
    nlohmann::json factors = nlohmann::json::object();
    if (delta.q) factors["q"] = {{"a", matrix_hex(delta.q->a)}, {"b", matrix_hex(delta.q->b)}};
    if (delta.v) factors["v"] = {{"a", matrix_hex(delta.v->a)}, {"b", matrix_hex(delta.v->b)}};
    j["delta"] = std::move(factors);
    j["acc_forget_before"] = acc_forget_before;
    j["acc_forget_after"] = acc_forget_after;
    j["acc_retain_before"] = acc_retain_before;
    j["acc_retain_after"] = acc_retain_after;
    j["loss_val_after"] = loss_val_after;
    j["epochs_run"] = epochs_run;
    j["steps_run"] = steps_run;
    j["base_version"] = base_version;
    return j;
  }

  static UnlearnReport from_json(const nlohmann::json& j, const tinylm::ModelConfig& c) {
    UnlearnReport r;
    r.lora.alpha = j.at("lora").at("alpha").get<double>();
    r.lora.dropout = j.at("lora").at("dropout").get<double>();
    r.lora.r = j.at("lora").at("r").get<std::size_t>();
    r.lora.target_query = j.at("lora").at("target_query").get<bool>();
    r.lora.target_value = j.at("lora").at("target_value").get<bool>();
    r.lora.validate(c);
    r.delta.config = r.lora;
    auto matrix_from_hex = [](const std::string& hex, std::size_t rows, std::size_t cols) {
      auto raw = from_hex(hex);
      if (!raw || raw->size() != rows * cols * 8)
        throw ShapeMismatchError("report factor size mismatch");
      Matrix m(rows, cols);
      CanonicalReader in(std::span<const std::uint8_t>(raw->data(), raw->size()));
      for (auto& v : m.data) v = in.f64();
      return m;
    };
    const auto& f = j.at("delta");
    if (r.lora.target_query) {
      r.delta.q = tinylm::LoraFactors{
          matrix_from_hex(f.at("q").at("a").get<std::string>(), c.d_model, r.lora.r),
          matrix_from_hex(f.at("q").at("b").get<std::string>(), r.lora.r, c.d_model)};
    }
    if (r.lora.target_value) {
      r.delta.v = tinylm::LoraFactors{
          matrix_from_hex(f.at("v").at("a").get<std::string>(), c.d_model, r.lora.r),
          matrix_from_hex(f.at("v").at("b").get<std::string>(), r.lora.r, c.d_model)};
    }
    r.acc_forget_before = j.at("acc_forget_before").get<double>();
    r.acc_forget_after = j.at("acc_forget_after").get<double>();
    r.acc_retain_before = j.at("acc_retain_before").get<double>();
    r.acc_retain_after = j.at("acc_retain_after").get<double>();
    r.loss_val_after = j.at("loss_val_after").get<double>();
    r.epochs_run = j.at("epochs_run").get<std::size_t>();
    r.steps_run = j.at("steps_run").get<std::size_t>();
    r.base_version = j.at("base_version").get<std::uint64_t>();
    return r;
  }
};

// The base the unlearning adapter applies to: any federated adapter is merged
// into a plain weight set first (exact for this architecture).
inline tinylm::Weights merged_base(const Model& global) {
  return global.adapter ? tinylm::merged_weights(global.weights, *global.adapter)
                        : global.weights;
}

// The fresh adapter an unlearning run starts from, reproducible from the
// request seed.
inline LoraAdapter initial_adapter(const tinylm::ModelConfig& c, const ForgetRequest& request) {
  Rng rng(request.seed ^ 0xf04e7u);
  return LoraAdapter::init(c, request.lora, rng);
}

// Algorithm: copy the global model, construct a fresh adapter, and for each
// unlearning epoch take mini-batch gradient-ascent steps on the forget set,
// restricted to the adapter. Base weights are never touched.
inline UnlearnReport unlearn(const Model& global, const ForgetRequest& request,
                             std::span<const Example> retain_eval) {
  if (request.e_u > 0 && request.d_forget.empty())
    throw EmptyForgetSetError("unlearning epochs requested with no forget data");

  const tinylm::ModelConfig& c = global.config;
  tinylm::Weights local = merged_base(global);

  Rng rng(request.seed ^ 0xf04e7u);
  LoraAdapter adapter = LoraAdapter::init(c, request.lora, rng);

  auto forget_tok = tinylm::tokenize_dataset(request.d_forget, c);
  auto retain_tok = tinylm::tokenize_dataset(retain_eval, c);

  UnlearnReport report;
  report.lora = request.lora;
  report.base_version = request.base_version;
  if (!forget_tok.empty()) {
    auto before = evaluate(local, &adapter, c, forget_tok);
    report.acc_forget_before = before.accuracy;
  }
  if (!retain_tok.empty()) {
    auto before = evaluate(local, &adapter, c, retain_tok);
    report.acc_retain_before = before.accuracy;
  }

  std::uint64_t step = 0;
  double forget_acc = report.acc_forget_before;
  std::vector<std::size_t> order(forget_tok.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<TokenizedExample> batch;
  for (std::size_t epoch = 0; epoch < request.e_u; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += request.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + request.batch_size); ++i)
        batch.push_back(forget_tok[order[i]]);
      tinylm::DropoutCtx dctx{tinylm::DropoutMode::Train, request.seed, step, 0};
      auto grads = tinylm::loss_and_grad(local, &adapter, c, batch,
                                         tinylm::Trainable::AdaptersOnly, dctx);
      tinylm::apply_update(nullptr, &adapter, grads,
                           {request.eta, tinylm::Direction::Ascent, request.ascent_clip});
      ++step;
    }
    report.epochs_run = epoch + 1;
    forget_acc = evaluate(local, &adapter, c, forget_tok).accuracy;
    if (request.stop_forget_acc && forget_acc <= *request.stop_forget_acc) break;
  }
  report.steps_run = step;

  report.acc_forget_after =
      forget_tok.empty() ? report.acc_forget_before : forget_acc;
  if (!retain_tok.empty()) {
    auto after = evaluate(local, &adapter, c, retain_tok);
    report.acc_retain_after = after.accuracy;
    report.loss_val_after = after.mean_loss;
  }
  report.delta = adapter;
  return report;
}

struct VerificationCriteria {
  double tau_forget = 0.10;                 // max allowed forget-set accuracy
  std::optional<double> delta_retain = {};  // max allowed retain-accuracy drop

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tau_forget"] = tau_forget;
    if (delta_retain)
      j["delta_retain"] = *delta_retain;
    else
      j["delta_retain"] = nullptr;
    return j;
  }
};

struct ValidationData {
  std::vector<Example> forget;
  std::vector<Example> retain;
  double retain_baseline_acc = 0.0;  // pre-unlearning retain accuracy reference
};

struct Verdict {
  bool pass = false;
  std::vector<std::string> reasons;
  double forget_acc = 0.0;  // recomputed, never copied from the report
  double retain_acc = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pass"] = pass;
    j["reasons"] = reasons;
    j["forget_acc"] = forget_acc;
    j["retain_acc"] = retain_acc;
    return j;
  }
};

// Pass iff the recomputed forget accuracy is within tau and, when enabled,
// the recomputed retain drop is within delta_retain.
inline Verdict verify(const Model& global, const UnlearnReport& report,
                      const VerificationCriteria& criteria, const ValidationData& validation) {
  Verdict v;
  tinylm::Weights base = merged_base(global);
  const LoraAdapter& adapter = report.delta;

  auto forget_tok = tinylm::tokenize_dataset(validation.forget, global.config);
  auto retain_tok = tinylm::tokenize_dataset(validation.retain, global.config);
  if (forget_tok.empty()) {
    v.reasons.push_back("no forget validation data");
    return v;
  }
  v.forget_acc = evaluate(base, &adapter, global.config, forget_tok).accuracy;
  if (!retain_tok.empty())
    v.retain_acc = evaluate(base, &adapter, global.config, retain_tok).accuracy;

  v.pass = true;
  if (v.forget_acc > criteria.tau_forget) {
    v.pass = false;
    v.reasons.push_back("forget accuracy above threshold");
  }
  if (criteria.delta_retain) {
    double drop = validation.retain_baseline_acc - v.retain_acc;
    if (drop > *criteria.delta_retain) {
      v.pass = false;
      v.reasons.push_back("retain accuracy drop above threshold");
    }
  }
  return v;
}

struct RetrainResult {
  tinylm::Weights weights;
  double forget_acc = 0.0;
  double retain_acc = 0.0;
  std::size_t gradient_steps = 0;
};

struct RetainShard {
  std::string client_id;
  std::vector<Example> data;
};

// Retrain-from-scratch comparison: a fresh model trained with the same
// federated loop (local SGD plus sample-weighted averaging) on retained data
// only. Forget accuracy is measured on the caller-supplied evaluation set.
inline RetrainResult retrain_baseline(const std::vector<RetainShard>& retain_shards,
                                      const tinylm::ModelConfig& config, std::size_t rounds,
                                      const tinylm::TrainOptions& opt,
                                      std::span<const Example> forget_eval,
                                      std::span<const Example> retain_eval, Rng& rng) {
  if (retain_shards.empty()) throw EmptyDatasetError("retrain_baseline requires retain data");
  for (const auto& shard : retain_shards)
    if (shard.data.empty()) throw EmptyDatasetError("empty retain shard " + shard.client_id);

  RetrainResult result;
  result.weights = tinylm::Weights::init(config, rng);

  std::vector<std::vector<TokenizedExample>> tokenized;
  tokenized.reserve(retain_shards.size());
  for (const auto& shard : retain_shards)
    tokenized.push_back(tinylm::tokenize_dataset(shard.data, config));

  for (std::size_t round = 0; round < rounds; ++round) {
    auto global_flat = result.weights.flatten();
    std::vector<params::WeightedUpdate> updates;
    for (std::size_t i = 0; i < retain_shards.size(); ++i) {
      tinylm::Weights local = result.weights;
      Rng crng(rng.next_u64());
      tinylm::TrainOptions local_opt = opt;
      local_opt.trainable = tinylm::Trainable::AllWeights;
      result.gradient_steps +=
          tinylm::sgd_train(local, nullptr, config, tokenized[i], local_opt, crng,
                            mix64(config.seed, round, i, 0x5e7));
      updates.push_back({retain_shards[i].client_id,
                         params::subtract(local.flatten(), global_flat),
                         tokenized[i].size()});
    }
    auto delta = params::weighted_mean(std::move(updates));
    params::add_in_place(global_flat, delta);
    result.weights.unflatten(global_flat);
  }

  if (!forget_eval.empty()) {
    auto tok = tinylm::tokenize_dataset(forget_eval, config);
    result.forget_acc = evaluate(result.weights, nullptr, config, tok).accuracy;
  }
  if (!retain_eval.empty()) {
    auto tok = tinylm::tokenize_dataset(retain_eval, config);
    result.retain_acc = evaluate(result.weights, nullptr, config, tok).accuracy;
  }
  return result;
}

}  // namespace fedchain::unlearner
