#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace detkit {

/// Dense row-major matrix of doubles. Zero-row and zero-column matrices are
/// legal and flow through every kernel below.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols)
      throw std::invalid_argument("Matrix: data size does not match rows*cols");
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(),
                       [](double v) { return std::isfinite(v); });
  }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: shape mismatch (" +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " * " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols) + ")");
  Matrix out(a.rows, b.cols);
  // i-k-j order keeps the inner loop contiguous over b and out.
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* orow = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// Per-row softmax with max subtraction. Rows of the result sum to 1 within
/// accumulation error; a zero-column input is returned unchanged.
inline Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  if (x.cols == 0) return out;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto in = x.row(i);
    auto o = out.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      o[j] = std::exp(in[j] - m);
      sum += o[j];
    }
    for (std::size_t j = 0; j < x.cols; ++j) o[j] /= sum;
  }
  return out;
}

inline Matrix transpose(const Matrix& x) {
  Matrix out(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
  return out;
}

}  // namespace detkit
