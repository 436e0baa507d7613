#pragma once

// Dense real linear algebra: row-major matrices, products, norms, a cyclic
// Jacobi symmetric eigensolver and a power-iteration spectral norm.
//
// Every reduction runs in a fixed order, so single-threaded results are
// bitwise reproducible. Row-parallel kernels keep that order per row, which
// makes them independent of the worker count as well.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <initializer_list>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ntklab/errors.hpp"
#include "ntklab/parallel.hpp"

namespace ntklab {

using Vec64 = std::vector<double>;

class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    DenseMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("DenseMatrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  static DenseMatrix column_vector(std::span<const double> v) {
    return DenseMatrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  Vec64 column(std::size_t j) const {
    Vec64 out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  DenseMatrix transposed() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  /// Rows selected by index, in the given order.
  DenseMatrix select_rows(std::span<const std::size_t> idx) const {
    DenseMatrix out(idx.size(), cols_);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto src = row(idx[r]);
      std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
  }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct EigenDecomposition {
  Vec64 eigenvalues;         // descending
  DenseMatrix eigenvectors;  // column i pairs with eigenvalues[i]
};

namespace detail {

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                         "x" + std::to_string(b.cols()));
  }
}

// out += s * x
inline void axpy(double s, const double* x, double* out, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) out[j] += s * x[j];
}

}  // namespace detail

inline double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// A * B, accumulated over the inner index in ascending order.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
  }
  DenseMatrix c(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  parallel_for(0, a.rows(), [&](std::size_t i) {
    double* out = c.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double s = a(i, k);
      if (s != 0.0) detail::axpy(s, b.row(k).data(), out, n);
    }
  }, 8);
  return c;
}

/// A * B^T.
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  return matmul(a, b.transposed());
}

/// A^T * B, accumulated over rows of A in ascending order.
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: row counts differ");
  DenseMatrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  parallel_for(0, a.cols(), [&](std::size_t r) {
    double* out = c.row(r).data();
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const double s = a(i, r);
      if (s != 0.0) detail::axpy(s, b.row(i).data(), out, n);
    }
  }, 8);
  return c;
}

/// Row Gram matrix A * A^T; symmetric by construction.
inline DenseMatrix gram_rows(const DenseMatrix& a) {
  const std::size_t n = a.rows();
  DenseMatrix g(n, n);
  parallel_for(0, n, [&](std::size_t i) {
    for (std::size_t j = 0; j <= i; ++j) g(i, j) = dot(a.row(i), a.row(j));
  });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) g(i, j) = g(j, i);
  return g;
}

inline Vec64 matvec(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DimensionError("matvec: length mismatch");
  Vec64 y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "add");
  DenseMatrix c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] += bv[i];
  return c;
}

inline DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "sub");
  DenseMatrix c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= bv[i];
  return c;
}

inline DenseMatrix scale(const DenseMatrix& a, double s) {
  DenseMatrix c = a;
  for (double& v : c.values()) v *= s;
  return c;
}

inline void add_in_place(DenseMatrix& acc, const DenseMatrix& b) {
  detail::require_same_shape(acc, b, "add_in_place");
  auto av = acc.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

inline double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
  return m;
}

inline double trace(const DenseMatrix& a) {
  if (!a.is_square()) throw DimensionError("trace: matrix is not square");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
  return s;
}

/// max |A_ij - A_ji|.
inline double asymmetry(const DenseMatrix& a) {
  if (!a.is_square()) throw DimensionError("asymmetry: matrix is not square");
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - a(j, i)));
  return m;
}

inline bool all_finite(const DenseMatrix& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

inline DenseMatrix outer(std::span<const double> u, std::span<const double> v) {
  DenseMatrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until every off-diagonal magnitude is below
/// 1e-12 * max(1, max|A_ij|), at most 100 sweeps. Eigenvalues come back
/// descending; tiny negative values from rounding are left as they are.
inline EigenDecomposition sym_eigen(const DenseMatrix& input) {
  if (!input.is_square()) {
    throw DimensionError("sym_eigen: matrix is " + std::to_string(input.rows()) + "x" +
                         std::to_string(input.cols()) + ", expected square");
  }
  const std::size_t n = input.rows();
  if (n == 0) throw DimensionError("sym_eigen: empty matrix");
  if (!all_finite(input)) throw NumericError("sym_eigen: non-finite entry");
  const double asym = asymmetry(input);
  if (asym > 1e-9) {
    throw SymmetryError("sym_eigen: asymmetry " + std::to_string(asym) + " exceeds 1e-9");
  }

  DenseMatrix a = input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  DenseMatrix v = DenseMatrix::identity(n);
  const double tol = 1e-12 * std::max(1.0, max_abs(a));

  auto max_off = [&] {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m = std::max(m, std::abs(a(i, j)));
    return m;
  };

  constexpr int kMaxSweeps = 100;
  bool converged = max_off() < tol;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = max_off() < tol;
  }
  if (!converged) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) mass += a(i, j) * a(i, j);
    std::ostringstream msg;
    msg << "sym_eigen: no convergence after " << kMaxSweeps
        << " sweeps, residual off-diagonal mass " << std::sqrt(2.0 * mass);
    throw ConvergenceError(msg.str());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  EigenDecomposition out{Vec64(n), DenseMatrix(n, n)};
  for (std::size_t c = 0; c < n; ++c) {
    out.eigenvalues[c] = a(order[c], order[c]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, c) = v(r, order[c]);
  }
  return out;
}

namespace detail {

// Rayleigh-quotient power iteration on a symmetric PSD matrix.
inline double power_lambda_max(const DenseMatrix& g, Vec64 v) {
  const double nv = norm2(v);
  for (double& x : v) x /= nv;
  constexpr int kMaxIter = 100000;
  double prev = std::numeric_limits<double>::quiet_NaN();
  double rho = 0.0;
  for (int it = 0; it < kMaxIter; ++it) {
    Vec64 w = matvec(g, v);
    rho = dot(v, w);
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / nw;
    if (it > 0 && std::abs(rho - prev) <= 1e-14 * std::abs(rho)) return rho;
    prev = rho;
  }
  std::ostringstream msg;
  msg << "spectral_norm: power iteration did not converge in " << kMaxIter
      << " iterations, last gap " << std::abs(rho - prev);
  throw ConvergenceError(msg.str());
}

}  // namespace detail

/// Largest singular value, by power iteration on the smaller of A^T A and
/// A A^T from a normalized all-ones start.
inline double spectral_norm(const DenseMatrix& a) {
  if (a.empty()) return 0.0;
  const DenseMatrix g = a.cols() <= a.rows() ? gram_rows(a.transposed()) : gram_rows(a);
  const std::size_t m = g.rows();
  double rho = detail::power_lambda_max(g, Vec64(m, 1.0));
  // The all-ones start can be orthogonal to the top eigenvector; the largest
  // diagonal entry is a lower bound on lambda_max that exposes that case.
  std::size_t best = 0;
  for (std::size_t i = 1; i < m; ++i)
    if (g(i, i) > g(best, best)) best = i;
  if (rho < g(best, best) * (1.0 - 1e-12)) {
    Vec64 e(m, 0.0);
    e[best] = 1.0;
    rho = std::max(rho, detail::power_lambda_max(g, std::move(e)));
  }
  return std::sqrt(std::max(rho, 0.0));
}

/// Fixed 17-significant-digit rendering; parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_matrix_csv(std::ostream& os, const DenseMatrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

/// One value per line.
inline void write_vector_csv(std::ostream& os, std::span<const double> v) {
  for (double x : v) os << format_double(x) << '\n';
}

namespace detail {

inline double parse_double(const std::string& field, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": not a number: '" + field + "'");
  }
  while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used]))) ++used;
  if (used != field.size()) {
    throw ParseError("line " + std::to_string(line) + ": not a number: '" + field + "'");
  }
  return v;
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline DenseMatrix read_matrix_csv(std::istream& is) {
  std::vector<double> data;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_fields(line);
    if (rows == 0) {
      cols = fields.size();
    } else if (fields.size() != cols) {
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                       " fields, found " + std::to_string(fields.size()));
    }
    for (const auto& f : fields) data.push_back(detail::parse_double(f, lineno));
    ++rows;
  }
  return DenseMatrix(rows, cols, std::move(data));
}

inline Vec64 read_vector_csv(std::istream& is) {
  const DenseMatrix m = read_matrix_csv(is);
  if (m.cols() > 1) throw ParseError("read_vector_csv: expected one value per line");
  return Vec64(m.values().begin(), m.values().end());
}

}  // namespace ntklab
