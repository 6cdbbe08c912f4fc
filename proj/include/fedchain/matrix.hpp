#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedchain/errors.hpp"
#include "fedchain/rng.hpp"

namespace fedchain {

// Dense row-major double matrix, sized for desk-scale models. A 1xN matrix
// doubles as a bias row.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  static Matrix gaussian(std::size_t r, std::size_t c, double stddev, Rng& rng) {
    Matrix m(r, c);
    for (auto& v : m.data) v = rng.gaussian(0.0, stddev);
    return m;
  }

  void fill(double v) {
    for (auto& x : data) x = v;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_shape(const Matrix& m, std::size_t r, std::size_t c, const char* what) {
  if (m.rows != r || m.cols != c)
    throw ShapeMismatchError(std::string(what) + ": expected " + std::to_string(r) + "x" +
                             std::to_string(c) + ", got " + std::to_string(m.rows) + "x" +
                             std::to_string(m.cols));
}

// out = a * b
inline void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.rows)
    throw ShapeMismatchError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                             " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  out.rows = a.rows;
  out.cols = b.cols;
  out.data.assign(a.rows * b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* orow = out.data.data() + i * b.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

// out += a * b
inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.rows || out.rows != a.rows || out.cols != b.cols)
    throw ShapeMismatchError("matmul_acc shape");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* orow = out.data.data() + i * b.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

// out += a^T * b  (a: m x n, b: m x p, out: n x p)
inline void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols)
    throw ShapeMismatchError("matmul_at_b_acc shape");
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + k * a.cols;
    const double* brow = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
}

// out += a * b^T  (a: m x n, b: p x n, out: m x p)
inline void matmul_a_bt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.cols || out.rows != a.rows || out.cols != b.rows)
    throw ShapeMismatchError("matmul_a_bt_acc shape");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* orow = out.data.data() + i * out.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      orow[j] += acc;
    }
  }
}

inline void add_scaled(Matrix& dst, const Matrix& src, double s) {
  if (!dst.same_shape(src)) throw ShapeMismatchError("add_scaled shape");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += s * src.data[i];
}

}  // namespace fedchain
