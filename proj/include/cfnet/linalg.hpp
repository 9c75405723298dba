#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cfnet {

using cplx = std::complex<double>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DefinitenessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense complex matrix, row-major. Sized for B*M_t <= ~32; no sparse or
// blocked storage.
class CMatrix {
 public:
  CMatrix() = default;
  CMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, cplx{0.0, 0.0}) {}

  static CMatrix identity(std::size_t n) {
    CMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  cplx& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const cplx& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  CMatrix& operator+=(const CMatrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }

  CMatrix& operator-=(const CMatrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }

  CMatrix& operator*=(cplx s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend CMatrix operator+(CMatrix a, const CMatrix& b) { return a += b; }
  friend CMatrix operator-(CMatrix a, const CMatrix& b) { return a -= b; }
  friend CMatrix operator*(CMatrix a, cplx s) { return a *= s; }

  double max_abs() const {
    double m = 0.0;
    for (const auto& v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  void check_same_shape(const CMatrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw ShapeError("CMatrix shape mismatch");
  }

  std::size_t rows_ = 0, cols_ = 0;
  std::vector<cplx> data_;
};

inline CMatrix hermitian(const CMatrix& a) {
  CMatrix r(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) r(j, i) = std::conj(a(i, j));
  return r;
}

inline CMatrix matmul(const CMatrix& a, const CMatrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dims differ");
  CMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const cplx aik = a(i, k);
      if (aik == cplx{0.0, 0.0}) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

// Cholesky factor L (lower, real positive diagonal) of an HPD matrix.
// Throws DefinitenessError on a non-positive pivot.
inline CMatrix cholesky_hpd(const CMatrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky: square required");
  const std::size_t n = a.rows();
  CMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    cplx diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * std::conj(l(j, k));
    const double d = diag.real();
    if (!(d > 0.0) || !std::isfinite(d))
      throw DefinitenessError("cholesky: non-positive pivot");
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      cplx s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * std::conj(l(j, k));
      l(i, j) = s / ljj;
    }
  }
  return l;
}

namespace detail {

// Inverse from the Cholesky factor: A^-1 = L^-H L^-1.
inline CMatrix inverse_from_cholesky(const CMatrix& l) {
  const std::size_t n = l.rows();
  // Invert the lower triangle by forward substitution.
  CMatrix linv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    linv(j, j) = 1.0 / l(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      cplx s{0.0, 0.0};
      for (std::size_t k = j; k < i; ++k) s += l(i, k) * linv(k, j);
      linv(i, j) = -s / l(i, i);
    }
  }
  CMatrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      cplx s{0.0, 0.0};
      for (std::size_t k = std::max(i, j); k < n; ++k)
        s += std::conj(linv(k, i)) * linv(k, j);
      inv(i, j) = s;
    }
  return inv;
}

inline double logdet_from_cholesky(const CMatrix& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i).real());
  return 2.0 * s;
}

}  // namespace detail

inline CMatrix inverse_hpd(const CMatrix& a) {
  return detail::inverse_from_cholesky(cholesky_hpd(a));
}

// Natural log of det(A) for HPD A. Callers divide by ln 2 for log2.
inline double logdet_hpd(const CMatrix& a) {
  return detail::logdet_from_cholesky(cholesky_hpd(a));
}

// One factorization serving both the inverse and the log-determinant.
struct HpdFactorization {
  CMatrix inverse;
  double logdet;
};

inline HpdFactorization factorize_hpd(const CMatrix& a) {
  const CMatrix l = cholesky_hpd(a);
  return {detail::inverse_from_cholesky(l), detail::logdet_from_cholesky(l)};
}

// diag(v_1, ..., v_B) (x) I_mt. Accepts relaxed values in [0,1].
inline CMatrix block_diag_expand(const std::vector<double>& v_col,
                                 std::size_t mt) {
  const std::size_t n = v_col.size() * mt;
  CMatrix m(n, n);
  for (std::size_t b = 0; b < v_col.size(); ++b)
    for (std::size_t t = 0; t < mt; ++t) m(b * mt + t, b * mt + t) = v_col[b];
  return m;
}

}  // namespace cfnet
