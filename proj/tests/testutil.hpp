#pragma once

// Shared test oracles. Everything here recomputes expectations through an
// independent code path from the implementation under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedchain/bytes.hpp"
#include "fedchain/sha2.hpp"
#include "fedchain/tinylm.hpp"

namespace testutil {

// Mean cross-entropy computed through the public forward pass only; the
// finite-difference reference for loss_and_grad.
inline double batch_loss(const fedchain::tinylm::Weights& w,
                         const fedchain::tinylm::LoraAdapter* adapter,
                         const fedchain::tinylm::ModelConfig& c,
                         std::span<const fedchain::tinylm::TokenizedExample> batch,
                         fedchain::tinylm::DropoutCtx ctx = {}) {
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ctx.sample = i;
    auto probs = fedchain::tinylm::forward(w, adapter, c, batch[i].tokens, ctx);
    loss += -std::log(probs[static_cast<std::size_t>(batch[i].label)]);
  }
  return loss / static_cast<double>(batch.size());
}

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t coords = 0;
};

inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

// Central finite differences over every coordinate of `param`, compared
// against `analytic` of the same shape.
inline void fd_check_matrix(fedchain::Matrix& param, const fedchain::Matrix& analytic,
                            double h, FdReport& report,
                            const std::function<double()>& loss_fn) {
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    double saved = param.data[i];
    param.data[i] = saved + h;
    double lp = loss_fn();
    param.data[i] = saved - h;
    double lm = loss_fn();
    param.data[i] = saved;
    double fd = (lp - lm) / (2.0 * h);
    report.max_rel_err = std::max(report.max_rel_err, rel_err(fd, analytic.data[i]));
    ++report.coords;
  }
}

// Finite-difference check of adapter gradients for one model draw.
inline FdReport fd_check_adapter(fedchain::tinylm::Weights& w,
                                 fedchain::tinylm::LoraAdapter& adapter,
                                 const fedchain::tinylm::ModelConfig& c,
                                 std::span<const fedchain::tinylm::TokenizedExample> batch,
                                 fedchain::tinylm::DropoutCtx ctx = {}, double h = 1e-4) {
  using namespace fedchain::tinylm;
  LossGrad g = loss_and_grad(w, &adapter, c, batch, Trainable::AdaptersOnly, ctx);
  FdReport report;
  auto loss_fn = [&]() { return batch_loss(w, &adapter, c, batch, ctx); };
  std::vector<fedchain::Matrix*> params;
  adapter.for_each([&](fedchain::Matrix& m) { params.push_back(&m); });
  std::vector<const fedchain::Matrix*> grads;
  g.adapter->for_each([&](const fedchain::Matrix& m) { grads.push_back(&m); });
  for (std::size_t i = 0; i < params.size(); ++i)
    fd_check_matrix(*params[i], *grads[i], h, report, loss_fn);
  return report;
}

// Same check over every base-weight coordinate (AllWeights mode).
inline FdReport fd_check_base(fedchain::tinylm::Weights& w,
                              fedchain::tinylm::LoraAdapter* adapter,
                              const fedchain::tinylm::ModelConfig& c,
                              std::span<const fedchain::tinylm::TokenizedExample> batch,
                              fedchain::tinylm::DropoutCtx ctx = {}, double h = 1e-4) {
  using namespace fedchain::tinylm;
  LossGrad g = loss_and_grad(w, adapter, c, batch, Trainable::AllWeights, ctx);
  FdReport report;
  auto loss_fn = [&]() { return batch_loss(w, adapter, c, batch, ctx); };
  std::vector<fedchain::Matrix*> params;
  w.for_each([&](fedchain::Matrix& m) { params.push_back(&m); });
  std::vector<const fedchain::Matrix*> grads;
  g.base->for_each([&](const fedchain::Matrix& m) { grads.push_back(&m); });
  for (std::size_t i = 0; i < params.size(); ++i)
    fd_check_matrix(*params[i], *grads[i], h, report, loss_fn);
  return report;
}

// Weighted-mean reference, written as the bare formula with no sorting or
// reuse of the production code path.
inline std::vector<double> naive_weighted_mean(
    const std::vector<std::vector<double>>& values, const std::vector<std::uint64_t>& counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  std::vector<double> out(values.front().size(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] += values[i][j] * (static_cast<double>(counts[i]) / total);
  return out;
}

inline std::string sha256_hex(const std::string& s) {
  return fedchain::to_hex(fedchain::Sha256::digest(s));
}

}  // namespace testutil
