#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace twinsight {

// Dense row-major 2-D array of 64-bit floats. The universal carrier for
// batches, features, logits and similarity matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows*cols entries, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> values);
  static Matrix identity(std::size_t n);

  bool empty() const { return rows == 0 || cols == 0; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

// Throws NumericError naming `context` if any entry is NaN or infinite.
void ensure_finite(const Matrix& m, const char* context);
void ensure_finite(std::span<const double> v, const char* context);

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double s);
void add_scaled_inplace(Matrix& a, const Matrix& b, double s);  // a += s*b

// Row-wise softmax with per-row max subtraction. Each output row is
// non-negative and sums to 1.
Matrix softmax_rows(const Matrix& logits);

// Scales every row to unit Euclidean norm. Rows with norm <= 1e-12 are
// degenerate embeddings and raise NumericError.
Matrix l2_normalize_rows(const Matrix& z);
std::vector<double> row_norms(const Matrix& z);

double dot(std::span<const double> u, std::span<const double> v);
double norm2(std::span<const double> v);

// u.v / (|u||v|), clamped into [-1, 1] against rounding. Zero-norm inputs
// (norm <= 1e-12) raise NumericError; length mismatch raises invalid_argument.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

}  // namespace twinsight
