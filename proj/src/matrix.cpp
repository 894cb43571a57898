#include "twinsight/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "twinsight/errors.hpp"

namespace twinsight {

namespace {
constexpr double kDegenerateNorm = 1e-12;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
  }
}
}  // namespace

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m;
  m.rows = values.size();
  m.cols = values.size() ? values.begin()->size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& r : values) {
    if (r.size() != m.cols) {
      throw std::invalid_argument("Matrix::from_rows: ragged rows");
    }
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

void ensure_finite(std::span<const double> v, const char* context) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(context) + ": non-finite value encountered");
    }
  }
}

void ensure_finite(const Matrix& m, const char* context) {
  ensure_finite(std::span<const double>(m.data), context);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                " vs " + std::to_string(b.rows) + ")");
  }
  Matrix c(a.rows, b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* crow = c.data.data() + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) {
    throw std::invalid_argument("matmul_nt: inner dimensions differ");
  }
  Matrix c(a.rows, b.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      c.at(i, j) = dot(a.row(i), b.row(j));
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw std::invalid_argument("matmul_tn: inner dimensions differ");
  }
  Matrix c(a.cols, b.cols, 0.0);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + k * a.cols;
    const double* brow = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  }
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Matrix scaled(const Matrix& a, double s) {
  Matrix c = a;
  for (double& x : c.data) x *= s;
  return c;
}

void add_scaled_inplace(Matrix& a, const Matrix& b, double s) {
  require_same_shape(a, b, "add_scaled_inplace");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

Matrix softmax_rows(const Matrix& logits) {
  ensure_finite(logits, "softmax_rows input");
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto in = logits.row(i);
    double mx = in[0];
    for (double x : in) mx = std::max(mx, x);
    double sum = 0.0;
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < in.size(); ++j) o[j] /= sum;
  }
  return out;
}

std::vector<double> row_norms(const Matrix& z) {
  std::vector<double> norms(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) norms[i] = norm2(z.row(i));
  return norms;
}

Matrix l2_normalize_rows(const Matrix& z) {
  Matrix out(z.rows, z.cols);
  for (std::size_t i = 0; i < z.rows; ++i) {
    const double n = norm2(z.row(i));
    if (n <= kDegenerateNorm) {
      throw NumericError("l2_normalize_rows: degenerate embedding at row " + std::to_string(i));
    }
    auto in = z.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < z.cols; ++j) o[j] = in[j] / n;
  }
  return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw std::invalid_argument("cosine_similarity: length mismatch");
  }
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (nu <= kDegenerateNorm || nv <= kDegenerateNorm) {
    throw NumericError("cosine_similarity: zero vector");
  }
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

}  // namespace twinsight
