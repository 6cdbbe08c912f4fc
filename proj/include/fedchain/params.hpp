#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "fedchain/errors.hpp"

// Flat parameter-vector plumbing shared by aggregation and unlearning.

namespace fedchain::params {

struct EmptyUpdateSetError : ModuleError {
  explicit EmptyUpdateSetError(const std::string& msg) : ModuleError("EmptyUpdateSet", msg) {}
};

struct WeightedUpdate {
  std::string client_id;
  std::vector<double> values;
  std::uint64_t sample_count = 0;
};

// Weighted coordinate-wise mean with p_i = count_i / sum(counts). Inputs are
// folded in ascending client_id order regardless of arrival order, so the
// result is literally permutation invariant.
inline std::vector<double> weighted_mean(std::vector<WeightedUpdate> updates) {
  if (updates.empty()) throw EmptyUpdateSetError("no updates to aggregate");
  std::sort(updates.begin(), updates.end(),
            [](const WeightedUpdate& a, const WeightedUpdate& b) {
              return a.client_id < b.client_id;
            });
  const std::size_t n = updates.front().values.size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.values.size() != n)
      throw ShapeMismatchError("update size " + std::to_string(u.values.size()) +
                               " != " + std::to_string(n));
    if (u.sample_count < 1) throw ShapeMismatchError("sample_count must be >= 1");
    total += static_cast<double>(u.sample_count);
  }
  std::vector<double> out(n, 0.0);
  for (const auto& u : updates) {
    const double p = static_cast<double>(u.sample_count) / total;
    for (std::size_t i = 0; i < n; ++i) out[i] += p * u.values[i];
  }
  return out;
}

inline std::vector<double> subtract(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeMismatchError("vector subtract size");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline void add_in_place(std::vector<double>& dst, const std::vector<double>& src) {
  if (dst.size() != src.size()) throw ShapeMismatchError("vector add size");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace fedchain::params
