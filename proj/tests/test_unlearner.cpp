#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedchain/corpus.hpp"
#include "fedchain/unlearner.hpp"
#include "testutil.hpp"

using namespace fedchain;
using namespace fedchain::unlearner;

namespace {

tinylm::ModelConfig small_config() {
  tinylm::ModelConfig c;
  c.d_model = 8;
  c.d_ff = 16;
  c.max_len = 48;
  return c;
}

tinylm::Model make_model(const tinylm::ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  tinylm::Model m;
  m.config = c;
  m.weights = tinylm::Weights::init(c, rng);
  return m;
}

}  // namespace

TEST_CASE("evaluate counts argmax hits") {
  // All-zero weights except the head bias: every input gets the same logits,
  // so the prediction is the bias argmax and accuracy is a hand count.
  auto c = small_config();
  tinylm::Model m;
  m.config = c;
  m.weights = tinylm::Weights::zeros(c);
  m.weights.b_head(0, 0) = 1.0;  // always predicts class 0

  std::vector<Example> data = {{"ace bad", 0}, {"cafe dab", 0}, {"egg fad", 0}, {"zag gab", 1}};
  auto result = evaluate(m, tinylm::tokenize_dataset(data, c));
  CHECK(result.accuracy == doctest::Approx(0.75));
}

TEST_CASE("evaluate is invariant under dataset duplication") {
  auto c = small_config();
  auto m = make_model(c, 3);
  auto data = corpus::generate_corpus(5, 16, 0.5);
  auto once = evaluate(m, tinylm::tokenize_dataset(data, c));
  auto doubled_data = data;
  doubled_data.insert(doubled_data.end(), data.begin(), data.end());
  auto twice = evaluate(m, tinylm::tokenize_dataset(doubled_data, c));
  CHECK(once.accuracy == doctest::Approx(twice.accuracy).epsilon(1e-12));
  CHECK(once.mean_loss == doctest::Approx(twice.mean_loss).epsilon(1e-12));
}

TEST_CASE("uniform model scores ln 2 loss on binary data") {
  auto c = small_config();
  tinylm::Model m;
  m.config = c;
  m.weights = tinylm::Weights::zeros(c);
  auto data = corpus::generate_corpus(6, 10, 0.5);
  auto result = evaluate(m, tinylm::tokenize_dataset(data, c));
  CHECK(result.mean_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("evaluate rejects empty datasets") {
  auto c = small_config();
  auto m = make_model(c, 1);
  std::vector<tinylm::TokenizedExample> empty;
  CHECK_THROWS_AS(evaluate(m, empty), EmptyDatasetError);
}

TEST_CASE("zero-epoch unlearning is the identity") {
  auto c = small_config();
  auto m = make_model(c, 7);
  auto forget = corpus::generate_corpus(8, 12, 1.0);
  auto retain = corpus::generate_corpus(9, 12, 0.5);

  ForgetRequest request;
  request.requester = "c1";
  request.d_forget = forget;
  request.e_u = 0;
  request.lora = tinylm::LoraConfig{4, 4.0, 0.0, true, true};
  request.seed = 11;
  auto report = unlearn(m, request, retain);

  CHECK(report.epochs_run == 0);
  CHECK(report.acc_forget_before == report.acc_forget_after);
  CHECK(report.acc_retain_before == report.acc_retain_after);

  // merged weight delta is exactly zero (B starts at zero)
  const auto& d = report.delta;
  auto merged_q =
      tinylm::lora_merge(Matrix(c.d_model, c.d_model), d.q->a, d.q->b, d.config.alpha,
                         d.config.r);
  for (double v : merged_q.data) CHECK(v == 0.0);

  // merged model outputs are bit-identical to the base model's
  auto tok = tinylm::tokenize_dataset(forget, c);
  for (const auto& ex : tok) {
    auto base = tinylm::forward(m.weights, nullptr, c, ex.tokens);
    auto with = tinylm::forward(m.weights, &report.delta, c, ex.tokens);
    CHECK(base == with);
  }
}

TEST_CASE("unlearning with epochs but no forget data is rejected") {
  auto c = small_config();
  auto m = make_model(c, 2);
  ForgetRequest request;
  request.e_u = 5;
  request.lora = tinylm::LoraConfig{4, 4.0, 0.0, true, true};
  CHECK_THROWS_AS(unlearn(m, request, {}), EmptyForgetSetError);
}

TEST_CASE("one ascent step adds eta times the clipped gradient") {
  auto c = small_config();
  auto m = make_model(c, 13);
  std::vector<Example> forget = {{"zag bad egg", 1}};

  ForgetRequest request;
  request.requester = "c1";
  request.d_forget = forget;
  request.e_u = 1;
  request.eta = 0.5;
  request.ascent_clip = 5.0;
  request.batch_size = 8;  // single full batch
  request.lora = tinylm::LoraConfig{4, 4.0, 0.0, true, true};
  request.seed = 21;

  auto init = initial_adapter(c, request);
  auto report = unlearn(m, request, {});

  // independent gradient: finite differences at the initial adapter
  auto tok = tinylm::tokenize_dataset(forget, c);
  tinylm::DropoutCtx ctx{tinylm::DropoutMode::Train, request.seed, 0, 0};
  auto analytic = tinylm::loss_and_grad(m.weights, &init, c, tok,
                                        tinylm::Trainable::AdaptersOnly, ctx);
  double gnorm = std::sqrt(analytic.squared_norm());
  double scale = gnorm > request.ascent_clip ? request.ascent_clip / gnorm : 1.0;

  std::vector<const Matrix*> grads;
  analytic.adapter->for_each([&](const Matrix& g) { grads.push_back(&g); });
  std::vector<const Matrix*> before;
  init.for_each([&](const Matrix& p) { before.push_back(&p); });
  std::vector<const Matrix*> after;
  report.delta.for_each([&](const Matrix& p) { after.push_back(&p); });

  // gradient itself matches finite differences
  testutil::FdReport fd;
  auto probe = init;
  auto loss_fn = [&]() { return testutil::batch_loss(m.weights, &probe, c, tok, ctx); };
  std::vector<Matrix*> probe_params;
  probe.for_each([&](Matrix& p) { probe_params.push_back(&p); });
  for (std::size_t i = 0; i < probe_params.size(); ++i)
    testutil::fd_check_matrix(*probe_params[i], *grads[i], 1e-4, fd, loss_fn);
  CHECK(fd.max_rel_err < 1e-3);

  // hand addition: after = before + eta * clipped gradient
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t j = 0; j < before[i]->data.size(); ++j) {
      double expected = before[i]->data[j] + request.eta * scale * grads[i]->data[j];
      CHECK(after[i]->data[j] == doctest::Approx(expected).epsilon(1e-12));
    }

  // base weights untouched
  CHECK(serialize_model(c, m.weights, nullptr) ==
        serialize_model(c, make_model(c, 13).weights, nullptr));
}

TEST_CASE("unlearn changes only adapter coordinates") {
  auto c = small_config();
  auto m = make_model(c, 17);
  auto forget = corpus::generate_corpus(18, 20, 1.0);
  Bytes base_before = serialize_model(c, m.weights, nullptr);

  ForgetRequest request;
  request.requester = "c1";
  request.d_forget = forget;
  request.e_u = 5;
  request.eta = 100.0;
  request.ascent_clip = 1e-3;
  request.lora = tinylm::LoraConfig{4, 4.0, 0.3, true, true};
  request.seed = 23;
  auto report = unlearn(m, request, {});
  CHECK(report.epochs_run == 5);
  CHECK(serialize_model(c, m.weights, nullptr) == base_before);
}

TEST_CASE("forget loss is non-decreasing under small-step ascent") {
  auto c = small_config();
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    auto m = make_model(c, seed * 31);
    auto forget = corpus::generate_corpus(seed, 8, 1.0);
    auto tok = tinylm::tokenize_dataset(forget, c);

    double prev_loss = -1e300;
    for (std::size_t epochs = 1; epochs <= 20; ++epochs) {
      ForgetRequest request;
      request.requester = "c1";
      request.d_forget = forget;
      request.e_u = epochs;
      request.eta = 1e-3;
      request.ascent_clip = 5.0;
      request.batch_size = 64;  // full batch
      request.lora = tinylm::LoraConfig{4, 4.0, 0.0, true, true};
      request.seed = seed;
      auto report = unlearn(m, request, {});
      double loss = evaluate(m.weights, &report.delta, c, tok).mean_loss;
      CHECK(loss >= prev_loss - 1e-9);
      prev_loss = loss;
    }
  }
}

TEST_CASE("verify recomputes and never trusts the report") {
  auto c = small_config();
  auto m = make_model(c, 29);
  auto forget = corpus::generate_corpus(30, 16, 0.5);
  auto retain = corpus::generate_corpus(31, 16, 0.5);

  ForgetRequest request;
  request.requester = "c1";
  request.d_forget = forget;
  request.e_u = 0;
  request.lora = tinylm::LoraConfig{4, 4.0, 0.0, true, true};
  request.seed = 5;
  auto report = unlearn(m, request, retain);

  ValidationData validation;
  validation.forget = forget;
  validation.retain = retain;

  double true_acc =
      evaluate(m.weights, &report.delta, c, tinylm::tokenize_dataset(forget, c)).accuracy;
  REQUIRE(true_acc > 0.0);

  SUBCASE("threshold just above the recomputed accuracy passes") {
    VerificationCriteria criteria;
    criteria.tau_forget = true_acc + 0.01;
    auto verdict = verify(m, report, criteria, validation);
    CHECK(verdict.pass);
    CHECK(verdict.forget_acc == doctest::Approx(true_acc));
  }

  SUBCASE("threshold just below fails with a reason") {
    VerificationCriteria criteria;
    criteria.tau_forget = true_acc - 0.01;
    auto verdict = verify(m, report, criteria, validation);
    CHECK(!verdict.pass);
    REQUIRE(verdict.reasons.size() == 1);
    CHECK(verdict.reasons[0] == "forget accuracy above threshold");
  }

  SUBCASE("corrupting the report's claimed metrics never flips the verdict") {
    VerificationCriteria criteria;
    criteria.tau_forget = true_acc - 0.01;
    UnlearnReport lying = report;
    lying.acc_forget_after = 0.0;  // claims perfect forgetting
    auto verdict = verify(m, lying, criteria, validation);
    CHECK(!verdict.pass);
    CHECK(verdict.forget_acc == doctest::Approx(true_acc));

    criteria.tau_forget = true_acc + 0.01;
    lying.acc_forget_after = 1.0;  // claims no forgetting
    auto verdict2 = verify(m, lying, criteria, validation);
    CHECK(verdict2.pass);
  }

  SUBCASE("retain-drop criterion applies when enabled") {
    VerificationCriteria criteria;
    criteria.tau_forget = 1.0;
    criteria.delta_retain = 0.0;
    validation.retain_baseline_acc = 1.0;  // any recomputed value below this fails
    auto verdict = verify(m, report, criteria, validation);
    if (verdict.retain_acc < 1.0) {
      CHECK(!verdict.pass);
      CHECK(verdict.reasons[0] == "retain accuracy drop above threshold");
    }
  }
}

TEST_CASE("report JSON round-trips the adapter exactly") {
  auto c = small_config();
  auto m = make_model(c, 37);
  auto forget = corpus::generate_corpus(38, 10, 1.0);

  ForgetRequest request;
  request.requester = "c1";
  request.d_forget = forget;
  request.e_u = 2;
  request.eta = 10.0;
  request.ascent_clip = 1e-3;
  request.lora = tinylm::LoraConfig{4, 2.0, 0.1, true, true};
  request.seed = 39;
  auto report = unlearn(m, request, {});

  auto j = report.to_json();
  auto parsed = UnlearnReport::from_json(j, c);
  CHECK(parsed.delta.flatten() == report.delta.flatten());
  CHECK(parsed.acc_forget_after == report.acc_forget_after);
  CHECK(parsed.epochs_run == report.epochs_run);
  CHECK(j.dump() == parsed.to_json().dump());
}

TEST_CASE("retrain baseline learns retained data and fails anti-correlated data") {
  tinylm::ModelConfig c;  // default width
  c.seed = 23;
  std::vector<RetainShard> shards;
  for (int i = 0; i < 2; ++i)
    shards.push_back({"r" + std::to_string(i), corpus::generate_corpus(50 + i, 100, 0.5)});

  // anti-correlated forget set: planted-rule sentences with labels flipped
  auto flipped = corpus::flip_labels(corpus::generate_corpus(60, 40, 0.5));
  auto retain_eval = corpus::generate_corpus(61, 60, 0.5);

  tinylm::TrainOptions opt;
  opt.epochs = 1;
  opt.eta = 0.5;
  opt.batch_size = 5;
  Rng rng(62);
  auto result = retrain_baseline(shards, c, 25, opt, flipped, retain_eval, rng);

  CHECK(result.retain_acc >= 0.95);
  CHECK(result.forget_acc <= 0.10);
  CHECK(result.gradient_steps == 25 * 2 * 20);
}

TEST_CASE("retrain baseline rejects empty retain data") {
  auto c = small_config();
  tinylm::TrainOptions opt;
  Rng rng(1);
  CHECK_THROWS_AS(retrain_baseline({}, c, 1, opt, {}, {}, rng), EmptyDatasetError);
  std::vector<RetainShard> shards = {{"r0", {}}};
  CHECK_THROWS_AS(retrain_baseline(shards, c, 1, opt, {}, {}, rng), EmptyDatasetError);
}
