#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedchain/tinylm.hpp"
#include "testutil.hpp"

using namespace fedchain;
using namespace fedchain::tinylm;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.d_ff = 8;
  c.max_len = 16;
  return c;
}

std::vector<TokenizedExample> small_batch(const ModelConfig& c) {
  std::vector<Example> raw = {
      {"zag bad", 1}, {"qed ace", 0}, {"gaze cafe dab", 1}, {"bad egg", 0}};
  return tokenize_dataset(raw, c);
}

}  // namespace

TEST_CASE("tokenize maps bytes and truncates") {
  CHECK(tokenize("ab", 64) == std::vector<int>{97, 98});
  std::string long_text(100, 'x');
  auto ids = tokenize(long_text, 64);
  CHECK(ids.size() == 64);
  for (int id : ids) CHECK(id == 'x');
  CHECK(tokenize("", 64).empty());
}

TEST_CASE("forward produces a probability vector") {
  ModelConfig c = small_config();
  Rng rng(7);
  Weights w = Weights::init(c, rng);
  auto ids = tokenize("hello", c.max_len);
  auto probs = forward(w, nullptr, c, ids);
  REQUIRE(probs.size() == c.n_classes);
  double sum = 0.0;
  for (double p : probs) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("empty input yields the uniform distribution") {
  ModelConfig c = small_config();
  Rng rng(7);
  Weights w = Weights::init(c, rng);
  auto probs = forward(w, nullptr, c, std::vector<int>{});
  for (double p : probs) CHECK(p == 0.5);
}

TEST_CASE("zero-B adapter leaves the forward pass bit-identical") {
  ModelConfig c = small_config();
  Rng rng(11);
  Weights w = Weights::init(c, rng);
  LoraConfig lc;
  lc.r = 4;
  LoraAdapter ad = LoraAdapter::init(c, lc, rng);
  auto ids = tokenize("zag cafe", c.max_len);
  auto base = forward(w, nullptr, c, ids);
  auto with = forward(w, &ad, c, ids);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == with[i]);
}

TEST_CASE("eval-mode forward is deterministic") {
  ModelConfig c = small_config();
  Rng rng(3);
  Weights w = Weights::init(c, rng);
  LoraConfig lc;
  lc.r = 2;
  lc.dropout = 0.4;  // must not fire in eval mode
  LoraAdapter ad = LoraAdapter::init(c, lc, rng);
  for (auto& m : {&ad.q->b, &ad.v->b})
    for (auto& v : m->data) v = 0.3;
  auto ids = tokenize("abcdef", c.max_len);
  auto p1 = forward(w, &ad, c, ids);
  auto p2 = forward(w, &ad, c, ids);
  CHECK(p1 == p2);
}

TEST_CASE("lora_merge matches the hand-worked example") {
  Matrix w(2, 2);
  w(0, 0) = 1; w(1, 1) = 1;
  Matrix a(2, 1);
  a(0, 0) = 1;
  Matrix b(1, 2);
  b(0, 1) = 2;
  Matrix merged = lora_merge(w, a, b, 1.0, 1);
  CHECK(merged(0, 0) == 1.0);
  CHECK(merged(0, 1) == 2.0);
  CHECK(merged(1, 0) == 0.0);
  CHECK(merged(1, 1) == 1.0);
}

TEST_CASE("lora_merge with zero A is the identity") {
  Matrix w(3, 3);
  for (std::size_t i = 0; i < 9; ++i) w.data[i] = static_cast<double>(i);
  Matrix a(3, 2), b(2, 3);
  for (auto& v : b.data) v = 5.0;
  Matrix merged = lora_merge(w, a, b, 8.0, 2);
  CHECK(merged.data == w.data);
}

TEST_CASE("alpha/r halves the update when alpha halves") {
  Rng rng(5);
  Matrix w(4, 4);
  Matrix a = Matrix::gaussian(4, 8, 1.0, rng);
  Matrix b = Matrix::gaussian(8, 4, 1.0, rng);
  Matrix m4 = lora_merge(w, a, b, 4.0, 8);
  Matrix m8 = lora_merge(w, a, b, 8.0, 8);
  for (std::size_t i = 0; i < m4.data.size(); ++i)
    CHECK(m4.data[i] == doctest::Approx(0.5 * m8.data[i]).epsilon(1e-12));
}

TEST_CASE("lora_merge rejects incompatible shapes") {
  Matrix w(4, 4), a(4, 2), b(3, 4);
  CHECK_THROWS_AS(lora_merge(w, a, b, 1.0, 2), ShapeMismatchError);
}

TEST_CASE("zeroed head gives ln 2 loss on a binary task") {
  ModelConfig c = small_config();
  Rng rng(13);
  Weights w = Weights::init(c, rng);
  w.w_head.fill(0.0);
  w.b_head.fill(0.0);
  auto batch = small_batch(c);
  LossGrad g = loss_and_grad(w, nullptr, c, batch, Trainable::AllWeights);
  CHECK(g.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("adapter gradients match central finite differences") {
  ModelConfig c = small_config();
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng(seed);
    Weights w = Weights::init(c, rng);
    LoraConfig lc;
    lc.r = 4;
    lc.alpha = 4.0;
    LoraAdapter ad = LoraAdapter::init(c, lc, rng);
    // push B off zero so both factors carry signal
    ad.for_each([&](Matrix& m) {
      for (auto& v : m.data) v += rng.gaussian(0.0, 0.05);
    });
    auto batch = small_batch(c);
    auto report = testutil::fd_check_adapter(w, ad, c, batch);
    CAPTURE(seed);
    CHECK(report.coords == ad.param_count());
    CHECK(report.max_rel_err < 1e-3);
  }
}

TEST_CASE("adapter gradients stay correct under train-mode dropout") {
  ModelConfig c = small_config();
  Rng rng(21);
  Weights w = Weights::init(c, rng);
  LoraConfig lc;
  lc.r = 4;
  lc.dropout = 0.3;
  LoraAdapter ad = LoraAdapter::init(c, lc, rng);
  ad.for_each([&](Matrix& m) {
    for (auto& v : m.data) v += rng.gaussian(0.0, 0.05);
  });
  auto batch = small_batch(c);
  DropoutCtx ctx{DropoutMode::Train, 99, 5, 0};
  auto report = testutil::fd_check_adapter(w, ad, c, batch, ctx);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("base-weight gradients match finite differences") {
  ModelConfig c = small_config();
  Rng rng(31);
  Weights w = Weights::init(c, rng);
  auto batch = small_batch(c);
  auto report = testutil::fd_check_base(w, nullptr, c, batch);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("AdaptersOnly emits no base gradients and never touches base bytes") {
  ModelConfig c = small_config();
  Rng rng(17);
  Weights w = Weights::init(c, rng);
  LoraConfig lc;
  lc.r = 4;
  LoraAdapter ad = LoraAdapter::init(c, lc, rng);
  auto batch = small_batch(c);
  LossGrad g = loss_and_grad(w, &ad, c, batch, Trainable::AdaptersOnly);
  CHECK(!g.base.has_value());
  REQUIRE(g.adapter.has_value());

  Bytes before = serialize_model(c, w, nullptr);
  Rng train_rng(5);
  TrainOptions opt;
  opt.epochs = 3;
  opt.eta = 0.5;
  opt.batch_size = 2;
  auto data = small_batch(c);
  sgd_train(w, &ad, c, data, opt, train_rng, 7);
  Bytes after = serialize_model(c, w, nullptr);
  CHECK(before == after);
}

TEST_CASE("apply_update arithmetic") {
  ModelConfig c = small_config();
  Rng rng(41);
  Weights w = Weights::init(c, rng);
  LoraConfig lc;
  lc.r = 2;
  LoraAdapter ad = LoraAdapter::init(c, lc, rng);
  auto batch = small_batch(c);
  LossGrad g = loss_and_grad(w, &ad, c, batch, Trainable::AdaptersOnly);

  SUBCASE("eta zero leaves parameters unchanged") {
    auto flat = ad.flatten();
    apply_update(nullptr, &ad, g, {0.0, Direction::Descent, 5.0});
    CHECK(ad.flatten() == flat);
  }

  SUBCASE("descent then ascent restores parameters exactly") {
    auto flat = ad.flatten();
    apply_update(nullptr, &ad, g, {0.25, Direction::Descent, std::nullopt});
    apply_update(nullptr, &ad, g, {0.25, Direction::Ascent, std::nullopt});
    auto restored = ad.flatten();
    REQUIRE(restored.size() == flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i)
      CHECK(restored[i] == doctest::Approx(flat[i]).epsilon(1e-12));
  }

  SUBCASE("global-norm clip caps the applied step") {
    // Build a synthetic gradient of norm 50; the clipped step must have
    // norm 5 * eta.
    LossGrad big;
    big.adapter = AdapterGrads::zeros_like(ad);
    std::size_t n = 0;
    big.adapter->for_each([&](Matrix& m) { n += m.size(); });
    double per = 50.0 / std::sqrt(static_cast<double>(n));
    big.adapter->for_each([&](Matrix& m) {
      for (auto& v : m.data) v = per;
    });
    CHECK(std::sqrt(big.squared_norm()) == doctest::Approx(50.0).epsilon(1e-12));
    auto before = ad.flatten();
    const double eta = 0.3;
    apply_update(nullptr, &ad, big, {eta, Direction::Descent, 5.0});
    auto after = ad.flatten();
    double step_norm = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      double dvi = after[i] - before[i];
      step_norm += dvi * dvi;
    }
    CHECK(std::sqrt(step_norm) == doctest::Approx(5.0 * eta).epsilon(1e-9));
  }
}

TEST_CASE("shape safety") {
  ModelConfig c = small_config();
  Rng rng(2);
  Weights w = Weights::init(c, rng);
  auto ids = tokenize("abc", c.max_len);

  SUBCASE("inconsistent weight shapes are rejected") {
    w.w_q = Matrix(4, 4);
    CHECK_THROWS_AS(forward(w, nullptr, c, ids), ShapeMismatchError);
  }
  SUBCASE("token out of range is rejected") {
    std::vector<int> bad = {5, 700};
    CHECK_THROWS_AS(forward(w, nullptr, c, bad), ShapeMismatchError);
  }
  SUBCASE("empty batch is rejected") {
    std::vector<TokenizedExample> batch;
    CHECK_THROWS_AS(loss_and_grad(w, nullptr, c, batch, Trainable::AllWeights),
                    EmptyBatchError);
  }
  SUBCASE("oversized lora rank is rejected") {
    LoraConfig lc;
    lc.r = 64;
    Rng r2(1);
    CHECK_THROWS_AS(LoraAdapter::init(c, lc, r2), ShapeMismatchError);
  }
}

TEST_CASE("model serialization round-trips byte-identically") {
  ModelConfig c = small_config();
  Rng rng(23);
  Weights w = Weights::init(c, rng);
  LoraConfig lc;
  lc.r = 4;
  lc.alpha = 2.0;
  lc.dropout = 0.1;
  LoraAdapter ad = LoraAdapter::init(c, lc, rng);
  Bytes bytes = serialize_model(c, w, &ad);
  Model m = deserialize_model(bytes);
  CHECK(m.serialize() == bytes);
  CHECK(m.adapter.has_value());
  CHECK(m.adapter->config.r == 4);

  Bytes no_adapter = serialize_model(c, w, nullptr);
  Model m2 = deserialize_model(no_adapter);
  CHECK(!m2.adapter.has_value());
  CHECK(m2.serialize() == no_adapter);
}
