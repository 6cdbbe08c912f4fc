#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedchain/bytes.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/matrix.hpp"
#include "fedchain/rng.hpp"

// Byte-level single-block transformer classifier with LoRA adapters on the
// attention query/value projections. Forward pass:
//   embed -> self-attention (softmax(QK^T / sqrt(d)) V, LoRA-merged Q/V)
//   -> residual -> ReLU FFN -> residual -> mean pool -> linear head -> softmax
// Gradients come from hand-written reverse mode; everything is double
// precision and deterministic given explicit RNG state.

namespace fedchain::tinylm {

struct Example {
  std::string text;
  int label = 0;
};

struct ModelConfig {
  std::size_t vocab = 256;
  std::size_t d_model = 16;
  std::size_t d_ff = 32;
  std::size_t max_len = 64;
  std::size_t n_classes = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab < 1 || d_model < 1 || d_ff < 1 || max_len < 1 || n_classes < 1)
      throw ShapeMismatchError("model config dimensions must be >= 1");
    if (vocab > (1u << 20) || d_model > (1u << 14) || d_ff > (1u << 14) ||
        max_len > (1u << 20) || n_classes > (1u << 14))
      throw ShapeMismatchError("model config dimensions out of range");
  }
};

inline std::vector<int> tokenize(std::string_view text, std::size_t max_len) {
  std::vector<int> ids;
  ids.reserve(std::min(text.size(), max_len));
  for (std::size_t i = 0; i < text.size() && i < max_len; ++i)
    ids.push_back(static_cast<int>(static_cast<unsigned char>(text[i])));
  return ids;
}

struct TokenizedExample {
  std::vector<int> tokens;
  int label = 0;
};

inline std::vector<TokenizedExample> tokenize_dataset(std::span<const Example> data,
                                                      const ModelConfig& config) {
  std::vector<TokenizedExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back({tokenize(ex.text, config.max_len), ex.label});
  return out;
}

struct Weights {
  Matrix embedding;                 // vocab x d_model
  Matrix w_q, w_k, w_v, w_o;        // d_model x d_model
  Matrix w_1;                       // d_model x d_ff
  Matrix b_1;                       // 1 x d_ff
  Matrix w_2;                       // d_ff x d_model
  Matrix b_2;                       // 1 x d_model
  Matrix w_head;                    // d_model x n_classes
  Matrix b_head;                    // 1 x n_classes

  template <typename F>
  void for_each(F&& f) {
    f(embedding); f(w_q); f(w_k); f(w_v); f(w_o);
    f(w_1); f(b_1); f(w_2); f(b_2); f(w_head); f(b_head);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(embedding); f(w_q); f(w_k); f(w_v); f(w_o);
    f(w_1); f(b_1); f(w_2); f(b_2); f(w_head); f(b_head);
  }

  static Weights zeros(const ModelConfig& c) {
    Weights w;
    w.embedding = Matrix(c.vocab, c.d_model);
    w.w_q = Matrix(c.d_model, c.d_model);
    w.w_k = Matrix(c.d_model, c.d_model);
    w.w_v = Matrix(c.d_model, c.d_model);
    w.w_o = Matrix(c.d_model, c.d_model);
    w.w_1 = Matrix(c.d_model, c.d_ff);
    w.b_1 = Matrix(1, c.d_ff);
    w.w_2 = Matrix(c.d_ff, c.d_model);
    w.b_2 = Matrix(1, c.d_model);
    w.w_head = Matrix(c.d_model, c.n_classes);
    w.b_head = Matrix(1, c.n_classes);
    return w;
  }

  // Default init scale is 1/sqrt(d_model): at desk-scale widths the fixed
  // 0.02 constant common in large transformers attenuates every projection by
  // ~sqrt(d)/50 and the network cannot move off the uniform output.
  static Weights init(const ModelConfig& c, Rng& rng, double stddev = 0.0) {
    if (stddev <= 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(c.d_model));
    Weights w = zeros(c);
    w.for_each([&](Matrix& m) {
      for (auto& v : m.data) v = rng.gaussian(0.0, stddev);
    });
    return w;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for_each([&](const Matrix& m) { n += m.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for_each([&](const Matrix& m) { out.insert(out.end(), m.data.begin(), m.data.end()); });
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != param_count())
      throw ShapeMismatchError("weights unflatten: size " + std::to_string(flat.size()) +
                               " != " + std::to_string(param_count()));
    std::size_t off = 0;
    for_each([&](Matrix& m) {
      std::copy(flat.begin() + off, flat.begin() + off + m.size(), m.data.begin());
      off += m.size();
    });
  }

  void check_shapes(const ModelConfig& c) const {
    require_shape(embedding, c.vocab, c.d_model, "embedding");
    require_shape(w_q, c.d_model, c.d_model, "w_q");
    require_shape(w_k, c.d_model, c.d_model, "w_k");
    require_shape(w_v, c.d_model, c.d_model, "w_v");
    require_shape(w_o, c.d_model, c.d_model, "w_o");
    require_shape(w_1, c.d_model, c.d_ff, "w_1");
    require_shape(b_1, 1, c.d_ff, "b_1");
    require_shape(w_2, c.d_ff, c.d_model, "w_2");
    require_shape(b_2, 1, c.d_model, "b_2");
    require_shape(w_head, c.d_model, c.n_classes, "w_head");
    require_shape(b_head, 1, c.n_classes, "b_head");
  }
};

enum class LoraTarget : unsigned { Query = 0, Value = 1 };

struct LoraConfig {
  std::size_t r = 8;
  double alpha = 4.0;
  double dropout = 0.0;
  bool target_query = true;
  bool target_value = true;

  double scale() const { return alpha / static_cast<double>(r); }

  void validate(const ModelConfig& c) const {
    if (r < 1 || r > c.d_model)
      throw ShapeMismatchError("lora rank must be in [1, d_model]");
    if (alpha <= 0.0) throw ShapeMismatchError("lora alpha must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ShapeMismatchError("lora dropout must be in [0, 1)");
    if (!target_query && !target_value)
      throw ShapeMismatchError("lora must target at least one of W_q, W_v");
  }
};

struct LoraFactors {
  Matrix a;  // d_model x r
  Matrix b;  // r x d_model
};

struct LoraAdapter {
  LoraConfig config;
  std::optional<LoraFactors> q;
  std::optional<LoraFactors> v;

  // A is Gaussian so gradients can flow; B starts at zero so the merged model
  // initially equals the base model.
  static LoraAdapter init(const ModelConfig& c, const LoraConfig& lc, Rng& rng,
                          double stddev = 0.02) {
    lc.validate(c);
    LoraAdapter ad;
    ad.config = lc;
    auto make = [&]() {
      LoraFactors f;
      f.a = Matrix::gaussian(c.d_model, lc.r, stddev, rng);
      f.b = Matrix(lc.r, c.d_model);
      return f;
    };
    if (lc.target_query) ad.q = make();
    if (lc.target_value) ad.v = make();
    return ad;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    if (q) n += q->a.size() + q->b.size();
    if (v) n += v->a.size() + v->b.size();
    return n;
  }

  template <typename F>
  void for_each(F&& f) {
    if (q) { f(q->a); f(q->b); }
    if (v) { f(v->a); f(v->b); }
  }
  template <typename F>
  void for_each(F&& f) const {
    if (q) { f(q->a); f(q->b); }
    if (v) { f(v->a); f(v->b); }
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for_each([&](const Matrix& m) { out.insert(out.end(), m.data.begin(), m.data.end()); });
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != param_count())
      throw ShapeMismatchError("adapter unflatten: size " + std::to_string(flat.size()) +
                               " != " + std::to_string(param_count()));
    std::size_t off = 0;
    for_each([&](Matrix& m) {
      std::copy(flat.begin() + off, flat.begin() + off + m.size(), m.data.begin());
      off += m.size();
    });
  }
};

// W' = W + (alpha/r) * A * B
inline Matrix lora_merge(const Matrix& w, const Matrix& a, const Matrix& b, double alpha,
                         std::size_t r) {
  if (r < 1) throw ShapeMismatchError("lora_merge: r must be >= 1");
  if (a.rows != w.rows || b.cols != w.cols || a.cols != r || b.rows != r)
    throw ShapeMismatchError("lora_merge: incompatible shapes");
  Matrix delta;
  matmul(a, b, delta);
  Matrix out = w;
  add_scaled(out, delta, alpha / static_cast<double>(r));
  return out;
}

// Materializes the adapter into a plain weight set (exact for this
// architecture: attention projections are linear in their weight matrices).
inline Weights merged_weights(const Weights& base, const LoraAdapter& adapter) {
  Weights out = base;
  if (adapter.q)
    out.w_q = lora_merge(base.w_q, adapter.q->a, adapter.q->b, adapter.config.alpha,
                         adapter.config.r);
  if (adapter.v)
    out.w_v = lora_merge(base.w_v, adapter.v->a, adapter.v->b, adapter.config.alpha,
                         adapter.config.r);
  return out;
}

enum class DropoutMode { Eval, Train };

// Counter-based dropout: the mask for a coordinate depends only on
// (seed, step, sample, target, position, dim), never on evaluation order.
struct DropoutCtx {
  DropoutMode mode = DropoutMode::Eval;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t sample = 0;
};

inline double dropout_keep(const DropoutCtx& ctx, unsigned target, std::size_t t, std::size_t j,
                           double p) {
  std::uint64_t word = mix64(ctx.seed ^ 0x8badf00ddeadbeefull, ctx.step, ctx.sample,
                             (static_cast<std::uint64_t>(target) << 48) |
                                 (static_cast<std::uint64_t>(t) << 24) |
                                 static_cast<std::uint64_t>(j));
  double u = static_cast<double>(word >> 11) * 0x1.0p-53;
  return u < p ? 0.0 : 1.0 / (1.0 - p);
}

namespace detail {

struct ForwardCache {
  Matrix x;              // T x d embeddings
  Matrix mask_q, mask_v; // dropout masks (empty when inactive)
  Matrix xq, xv;         // adapter inputs after dropout (alias semantics: equal to x when no mask)
  Matrix xa_q, xa_v;     // X~ * A per target, T x r
  Matrix q, k, v;        // T x d
  Matrix attn;           // T x T softmax rows
  Matrix ctx;            // T x d
  Matrix attn_out;       // T x d
  Matrix h;              // T x d
  Matrix u;              // T x dff
  Matrix relu;           // T x dff
  Matrix ffn;            // T x d
  Matrix z;              // T x d
  std::vector<double> pooled;
  std::vector<double> logits;
  std::vector<double> probs;
};

inline void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* row = m.data.data() + i * m.cols;
    double mx = row[0];
    for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < m.cols; ++j) row[j] /= sum;
  }
}

inline std::vector<double> softmax_vec(std::span<const double> in) {
  std::vector<double> out(in.begin(), in.end());
  double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

// Full forward pass with every intermediate kept for reverse mode.
inline void forward_cached(const Weights& w, const LoraAdapter* adapter, const ModelConfig& c,
                           std::span<const int> tokens, const DropoutCtx& dctx,
                           ForwardCache& cc) {
  const std::size_t T = tokens.size();
  const std::size_t d = c.d_model;

  cc.pooled.assign(d, 0.0);
  if (T == 0) {
    // Degenerate input: uniform class distribution, no gradient flow.
    cc.logits.assign(c.n_classes, 0.0);
    cc.probs.assign(c.n_classes, 1.0 / static_cast<double>(c.n_classes));
    return;
  }

  cc.x.rows = T; cc.x.cols = d;
  cc.x.data.assign(T * d, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= c.vocab)
      throw ShapeMismatchError("token id out of range");
    const double* row = w.embedding.data.data() + static_cast<std::size_t>(tokens[t]) * d;
    std::copy(row, row + d, cc.x.data.begin() + t * d);
  }

  const bool train_drop = adapter != nullptr && dctx.mode == DropoutMode::Train &&
                          adapter->config.dropout > 0.0;
  auto adapter_input = [&](unsigned target, Matrix& mask, Matrix& xt) {
    if (!train_drop) {
      xt = cc.x;
      mask = Matrix();
      return;
    }
    mask.rows = T; mask.cols = d;
    mask.data.assign(T * d, 0.0);
    xt.rows = T; xt.cols = d;
    xt.data.assign(T * d, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        double keep = dropout_keep(dctx, target, t, j, adapter->config.dropout);
        mask(t, j) = keep;
        xt(t, j) = keep * cc.x(t, j);
      }
  };

  matmul(cc.x, w.w_q, cc.q);
  matmul(cc.x, w.w_k, cc.k);
  matmul(cc.x, w.w_v, cc.v);

  if (adapter != nullptr) {
    const double s = adapter->config.scale();
    if (adapter->q) {
      adapter_input(static_cast<unsigned>(LoraTarget::Query), cc.mask_q, cc.xq);
      matmul(cc.xq, adapter->q->a, cc.xa_q);
      Matrix delta;
      matmul(cc.xa_q, adapter->q->b, delta);
      add_scaled(cc.q, delta, s);
    }
    if (adapter->v) {
      adapter_input(static_cast<unsigned>(LoraTarget::Value), cc.mask_v, cc.xv);
      matmul(cc.xv, adapter->v->a, cc.xa_v);
      Matrix delta;
      matmul(cc.xa_v, adapter->v->b, delta);
      add_scaled(cc.v, delta, s);
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  cc.attn.rows = T; cc.attn.cols = T;
  cc.attn.data.assign(T * T, 0.0);
  matmul_a_bt_acc(cc.q, cc.k, cc.attn);
  for (auto& s : cc.attn.data) s *= inv_sqrt_d;
  softmax_rows(cc.attn);

  matmul(cc.attn, cc.v, cc.ctx);
  matmul(cc.ctx, w.w_o, cc.attn_out);

  cc.h = cc.x;
  add_scaled(cc.h, cc.attn_out, 1.0);

  matmul(cc.h, w.w_1, cc.u);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < c.d_ff; ++j) cc.u(t, j) += w.b_1(0, j);
  cc.relu = cc.u;
  for (auto& v : cc.relu.data) v = v > 0.0 ? v : 0.0;

  matmul(cc.relu, w.w_2, cc.ffn);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) cc.ffn(t, j) += w.b_2(0, j);

  cc.z = cc.h;
  add_scaled(cc.z, cc.ffn, 1.0);

  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) cc.pooled[j] += cc.z(t, j);
  for (std::size_t j = 0; j < d; ++j) cc.pooled[j] /= static_cast<double>(T);

  cc.logits.assign(c.n_classes, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double pj = cc.pooled[j];
    for (std::size_t k = 0; k < c.n_classes; ++k) cc.logits[k] += pj * w.w_head(j, k);
  }
  for (std::size_t k = 0; k < c.n_classes; ++k) cc.logits[k] += w.b_head(0, k);

  cc.probs = softmax_vec(cc.logits);
}

}  // namespace detail

inline std::vector<double> forward(const Weights& w, const LoraAdapter* adapter,
                                   const ModelConfig& c, std::span<const int> tokens,
                                   const DropoutCtx& dctx = {}) {
  c.validate();
  w.check_shapes(c);
  if (adapter != nullptr) adapter->config.validate(c);
  detail::ForwardCache cc;
  detail::forward_cached(w, adapter, c, tokens, dctx, cc);
  return cc.probs;
}

enum class Trainable { AdaptersOnly, AllWeights };

struct AdapterGrads {
  std::optional<LoraFactors> q;
  std::optional<LoraFactors> v;

  static AdapterGrads zeros_like(const LoraAdapter& ad) {
    AdapterGrads g;
    if (ad.q) g.q = LoraFactors{Matrix(ad.q->a.rows, ad.q->a.cols), Matrix(ad.q->b.rows, ad.q->b.cols)};
    if (ad.v) g.v = LoraFactors{Matrix(ad.v->a.rows, ad.v->a.cols), Matrix(ad.v->b.rows, ad.v->b.cols)};
    return g;
  }

  template <typename F>
  void for_each(F&& f) {
    if (q) { f(q->a); f(q->b); }
    if (v) { f(v->a); f(v->b); }
  }
  template <typename F>
  void for_each(F&& f) const {
    if (q) { f(q->a); f(q->b); }
    if (v) { f(v->a); f(v->b); }
  }
};

struct LossGrad {
  double loss = 0.0;
  std::optional<Weights> base;          // present in AllWeights mode
  std::optional<AdapterGrads> adapter;  // present when an adapter is attached

  double squared_norm() const {
    double s = 0.0;
    auto acc = [&](const Matrix& m) {
      for (double v : m.data) s += v * v;
    };
    if (base) base->for_each(acc);
    if (adapter) adapter->for_each(acc);
    return s;
  }

  void scale(double f) {
    auto mul = [&](Matrix& m) {
      for (double& v : m.data) v *= f;
    };
    if (base) base->for_each(mul);
    if (adapter) adapter->for_each(mul);
  }
};

// Mean cross-entropy over the batch plus reverse-mode gradients for the
// selected trainable set.
inline LossGrad loss_and_grad(const Weights& w, const LoraAdapter* adapter, const ModelConfig& c,
                              std::span<const TokenizedExample> batch, Trainable trainable,
                              const DropoutCtx& base_ctx = {}) {
  c.validate();
  w.check_shapes(c);
  if (adapter != nullptr) adapter->config.validate(c);
  if (batch.empty()) throw EmptyBatchError("loss_and_grad requires a non-empty batch");
  if (trainable == Trainable::AdaptersOnly && adapter == nullptr)
    throw ShapeMismatchError("AdaptersOnly requires an attached adapter");
  for (const auto& ex : batch)
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= c.n_classes)
      throw ShapeMismatchError("label out of range");

  LossGrad out;
  const bool want_base = trainable == Trainable::AllWeights;
  if (want_base) out.base = Weights::zeros(c);
  if (adapter != nullptr) out.adapter = AdapterGrads::zeros_like(*adapter);

  const std::size_t d = c.d_model;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s = adapter != nullptr ? adapter->config.scale() : 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  detail::ForwardCache cc;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const auto& ex = batch[bi];
    DropoutCtx dctx = base_ctx;
    dctx.sample = bi;
    detail::forward_cached(w, adapter, c, ex.tokens, dctx, cc);

    out.loss += -std::log(std::max(cc.probs[static_cast<std::size_t>(ex.label)], 1e-300)) * inv_n;
    const std::size_t T = ex.tokens.size();
    if (T == 0) continue;  // uniform output, zero gradient contribution

    // d loss / d logits, already scaled by the batch mean factor
    std::vector<double> dlogits(cc.probs);
    dlogits[static_cast<std::size_t>(ex.label)] -= 1.0;
    for (auto& v : dlogits) v *= inv_n;

    std::vector<double> dpooled(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < c.n_classes; ++k)
        dpooled[j] += w.w_head(j, k) * dlogits[k];
    if (want_base) {
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < c.n_classes; ++k)
          out.base->w_head(j, k) += cc.pooled[j] * dlogits[k];
      for (std::size_t k = 0; k < c.n_classes; ++k) out.base->b_head(0, k) += dlogits[k];
    }

    const double inv_t = 1.0 / static_cast<double>(T);
    Matrix dz(T, d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) dz(t, j) = dpooled[j] * inv_t;

    // Z = H + F
    Matrix dh = dz;
    Matrix drelu(T, c.d_ff);
    matmul_a_bt_acc(dz, w.w_2, drelu);  // dR = dF * W2^T (dF == dz)
    if (want_base) {
      matmul_at_b_acc(cc.relu, dz, out.base->w_2);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) out.base->b_2(0, j) += dz(t, j);
    }
    Matrix du = drelu;
    for (std::size_t i = 0; i < du.data.size(); ++i)
      if (cc.u.data[i] <= 0.0) du.data[i] = 0.0;
    if (want_base) {
      matmul_at_b_acc(cc.h, du, out.base->w_1);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < c.d_ff; ++j) out.base->b_1(0, j) += du(t, j);
    }
    matmul_a_bt_acc(du, w.w_1, dh);  // dH += dU * W1^T

    // H = X + O
    Matrix dx = dh;
    Matrix dctx_m(T, d);
    matmul_a_bt_acc(dh, w.w_o, dctx_m);  // dC = dO * Wo^T (dO == dh)
    if (want_base) matmul_at_b_acc(cc.ctx, dh, out.base->w_o);

    // C = P V
    Matrix dattn(T, T);
    matmul_a_bt_acc(dctx_m, cc.v, dattn);  // dP = dC * V^T
    Matrix dv(T, d);
    matmul_at_b_acc(cc.attn, dctx_m, dv);  // dV = P^T * dC

    // softmax rows backward
    Matrix dscores(T, T);
    for (std::size_t t = 0; t < T; ++t) {
      const double* prow = cc.attn.data.data() + t * T;
      const double* dprow = dattn.data.data() + t * T;
      double dot = 0.0;
      for (std::size_t j = 0; j < T; ++j) dot += prow[j] * dprow[j];
      double* drow = dscores.data.data() + t * T;
      for (std::size_t j = 0; j < T; ++j) drow[j] = prow[j] * (dprow[j] - dot);
    }
    for (auto& x : dscores.data) x *= inv_sqrt_d;

    Matrix dq(T, d);
    matmul_acc(dscores, cc.k, dq);       // dQ = dS * K
    Matrix dk(T, d);
    matmul_at_b_acc(dscores, cc.q, dk);  // dK = dS^T * Q

    // Q/V projections plus adapter paths
    auto back_projection = [&](const Matrix& dproj, const Matrix& w_proj, Matrix* w_grad,
                               const std::optional<LoraFactors>& factors, LoraFactors* fgrad,
                               const Matrix& xtilde, const Matrix& xa, const Matrix& mask) {
      if (w_grad != nullptr) matmul_at_b_acc(cc.x, dproj, *w_grad);
      matmul_a_bt_acc(dproj, w_proj, dx);  // dX += dProj * W^T
      if (factors && fgrad != nullptr) {
        // dB += s * (X~ A)^T dProj ; dA += s * X~^T (dProj B^T)
        Matrix tmp = xa;  // reuse shape T x r
        tmp.data.assign(tmp.data.size(), 0.0);
        matmul_a_bt_acc(dproj, factors->b, tmp);  // dProj * B^T : T x r
        Matrix xa_t_dproj(factors->b.rows, factors->b.cols);
        xa_t_dproj.data.assign(xa_t_dproj.data.size(), 0.0);
        matmul_at_b_acc(xa, dproj, xa_t_dproj);
        for (std::size_t i = 0; i < fgrad->b.data.size(); ++i)
          fgrad->b.data[i] += s * xa_t_dproj.data[i];
        Matrix xt_tmp(factors->a.rows, factors->a.cols);
        xt_tmp.data.assign(xt_tmp.data.size(), 0.0);
        matmul_at_b_acc(xtilde, tmp, xt_tmp);
        for (std::size_t i = 0; i < fgrad->a.data.size(); ++i)
          fgrad->a.data[i] += s * xt_tmp.data[i];
        // dX~ = s * dProj B^T A^T, flowing through the dropout mask
        Matrix dxt(T, d);
        matmul_a_bt_acc(tmp, factors->a, dxt);
        if (mask.data.empty()) {
          for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += s * dxt.data[i];
        } else {
          for (std::size_t i = 0; i < dx.data.size(); ++i)
            dx.data[i] += s * dxt.data[i] * mask.data[i];
        }
      }
    };

    back_projection(dq, w.w_q, want_base ? &out.base->w_q : nullptr,
                    adapter != nullptr ? adapter->q : std::optional<LoraFactors>{},
                    out.adapter && out.adapter->q ? &*out.adapter->q : nullptr, cc.xq, cc.xa_q,
                    cc.mask_q);
    back_projection(dv, w.w_v, want_base ? &out.base->w_v : nullptr,
                    adapter != nullptr ? adapter->v : std::optional<LoraFactors>{},
                    out.adapter && out.adapter->v ? &*out.adapter->v : nullptr, cc.xv, cc.xa_v,
                    cc.mask_v);

    if (want_base) matmul_at_b_acc(cc.x, dk, out.base->w_k);
    matmul_a_bt_acc(dk, w.w_k, dx);

    if (want_base) {
      for (std::size_t t = 0; t < T; ++t) {
        double* erow =
            out.base->embedding.data.data() + static_cast<std::size_t>(ex.tokens[t]) * d;
        const double* dxrow = dx.data.data() + t * d;
        for (std::size_t j = 0; j < d; ++j) erow[j] += dxrow[j];
      }
    }
  }
  return out;
}

enum class Direction { Descent, Ascent };

struct UpdateOptions {
  double eta = 0.1;
  Direction direction = Direction::Descent;
  std::optional<double> clip_norm = 5.0;
};

// theta <- theta -/+ eta * clip(g). The clip is a global-norm clip across the
// whole trainable set, applied before the step.
inline void apply_update(Weights* base, LoraAdapter* adapter, const LossGrad& grads,
                         const UpdateOptions& opt) {
  LossGrad g = grads;
  if (opt.clip_norm) {
    double norm = std::sqrt(g.squared_norm());
    if (norm > *opt.clip_norm && norm > 0.0) g.scale(*opt.clip_norm / norm);
  }
  const double step = opt.direction == Direction::Descent ? -opt.eta : opt.eta;
  if (g.base) {
    if (base == nullptr) throw ShapeMismatchError("base gradients with no base parameters");
    std::vector<Matrix*> dst;
    base->for_each([&](Matrix& m) { dst.push_back(&m); });
    std::vector<const Matrix*> src;
    g.base->for_each([&](const Matrix& m) { src.push_back(&m); });
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (!dst[i]->same_shape(*src[i])) throw ShapeMismatchError("apply_update base shape");
      add_scaled(*dst[i], *src[i], step);
    }
  }
  if (g.adapter) {
    if (adapter == nullptr) throw ShapeMismatchError("adapter gradients with no adapter");
    std::vector<Matrix*> dst;
    adapter->for_each([&](Matrix& m) { dst.push_back(&m); });
    std::vector<const Matrix*> src;
    g.adapter->for_each([&](const Matrix& m) { src.push_back(&m); });
    if (dst.size() != src.size()) throw ShapeMismatchError("apply_update adapter arity");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (!dst[i]->same_shape(*src[i])) throw ShapeMismatchError("apply_update adapter shape");
      add_scaled(*dst[i], *src[i], step);
    }
  }
}

struct TrainOptions {
  std::size_t epochs = 1;
  double eta = 0.5;
  std::size_t batch_size = 32;
  Trainable trainable = Trainable::AdaptersOnly;
  std::optional<double> clip_norm = 5.0;
  DropoutMode dropout_mode = DropoutMode::Train;
};

// Mini-batch SGD over one dataset; returns the number of applied steps.
// Shuffling consumes the caller's RNG, dropout keys off (seed, step, sample).
inline std::size_t sgd_train(Weights& w, LoraAdapter* adapter, const ModelConfig& c,
                             std::span<const TokenizedExample> dataset, const TrainOptions& opt,
                             Rng& rng, std::uint64_t dropout_seed = 0) {
  if (dataset.empty()) throw EmptyDatasetError("sgd_train requires data");
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t steps = 0;
  std::vector<TokenizedExample> batch;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      std::size_t end = std::min(order.size(), start + opt.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      DropoutCtx dctx{opt.dropout_mode, dropout_seed, steps, 0};
      LossGrad g = loss_and_grad(w, adapter, c, batch, opt.trainable, dctx);
      apply_update(&w, adapter, g, {opt.eta, Direction::Descent, opt.clip_norm});
      ++steps;
    }
  }
  return steps;
}

// Serialized layout: config header, then base matrices in declared order as
// raw little-endian doubles, then an adapter section when present. This is
// the byte format hashed and recorded on the ledger.
inline Bytes serialize_model(const ModelConfig& c, const Weights& w, const LoraAdapter* adapter) {
  w.check_shapes(c);
  CanonicalWriter out;
  out.u64(c.vocab).u64(c.d_model).u64(c.d_ff).u64(c.max_len).u64(c.n_classes).u64(c.seed);
  w.for_each([&](const Matrix& m) {
    for (double v : m.data) out.f64(v);
  });
  if (adapter == nullptr) {
    out.u64(0);
  } else {
    out.u64(1);
    out.u64(adapter->config.r).f64(adapter->config.alpha).f64(adapter->config.dropout);
    out.u64((adapter->config.target_query ? 1u : 0u) | (adapter->config.target_value ? 2u : 0u));
    adapter->for_each([&](const Matrix& m) {
      for (double v : m.data) out.f64(v);
    });
  }
  return out.take();
}

struct Model {
  ModelConfig config;
  Weights weights;
  std::optional<LoraAdapter> adapter;

  Bytes serialize() const {
    return serialize_model(config, weights, adapter ? &*adapter : nullptr);
  }
};

inline Model deserialize_model(std::span<const std::uint8_t> bytes) {
  CanonicalReader in(bytes);
  Model m;
  m.config.vocab = in.u64();
  m.config.d_model = in.u64();
  m.config.d_ff = in.u64();
  m.config.max_len = in.u64();
  m.config.n_classes = in.u64();
  m.config.seed = in.u64();
  m.config.validate();
  m.weights = Weights::zeros(m.config);
  m.weights.for_each([&](Matrix& mat) {
    for (auto& v : mat.data) v = in.f64();
  });
  if (in.u64() == 1) {
    LoraConfig lc;
    lc.r = in.u64();
    lc.alpha = in.f64();
    lc.dropout = in.f64();
    std::uint64_t mask = in.u64();
    lc.target_query = (mask & 1u) != 0;
    lc.target_value = (mask & 2u) != 0;
    lc.validate(m.config);
    LoraAdapter ad;
    ad.config = lc;
    if (lc.target_query)
      ad.q = LoraFactors{Matrix(m.config.d_model, lc.r), Matrix(lc.r, m.config.d_model)};
    if (lc.target_value)
      ad.v = LoraFactors{Matrix(m.config.d_model, lc.r), Matrix(lc.r, m.config.d_model)};
    ad.for_each([&](Matrix& mat) {
      for (auto& v : mat.data) v = in.f64();
    });
    m.adapter = std::move(ad);
  }
  if (!in.done()) throw ShapeMismatchError("model bytes have trailing data");
  return m;
}

}  // namespace fedchain::tinylm
