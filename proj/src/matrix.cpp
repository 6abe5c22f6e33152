#include "fedalign/matrix.hpp"

#include <cmath>
#include <string>

#include "fedalign/errors.hpp"
#include "fedalign/kernels.hpp"

namespace fedalign {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

void Matrix::add_scaled(const Matrix& x, double alpha) {
  if (!same_shape(x)) {
    throw ShapeError("add_scaled: shape mismatch " + std::to_string(rows_) +
                     "x" + std::to_string(cols_) + " vs " +
                     std::to_string(x.rows_) + "x" + std::to_string(x.cols_));
  }
  kernels::axpy(data_.data(), alpha, x.data_.data(), data_.size());
}

void Matrix::scale(double alpha) {
  kernels::scal(data_.data(), alpha, data_.size());
}

double Matrix::frobenius_norm() const {
  return std::sqrt(kernels::dot(data_.data(), data_.data(), data_.size()));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " * " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  // i-k-j order: each output element accumulates over k in a fixed order,
  // so the result does not depend on the active kernel backend.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      kernels::axpy(ci, a.at(i, k), b.row(k), b.cols());
    }
  }
  return c;
}

Vec matvec(const Matrix& m, const Vec& x) {
  if (m.cols() != x.size()) {
    throw ShapeError("matvec: matrix cols " + std::to_string(m.cols()) +
                     " vs vector dim " + std::to_string(x.size()));
  }
  Vec y(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    y[i] = kernels::dot(m.row(i), x.data(), m.cols());
  }
  return y;
}

Vec matvec_transposed(const Matrix& m, const Vec& x) {
  if (m.rows() != x.size()) {
    throw ShapeError("matvec_transposed: matrix rows " +
                     std::to_string(m.rows()) + " vs vector dim " +
                     std::to_string(x.size()));
  }
  Vec y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    kernels::axpy(y.data(), x[i], m.row(i), m.cols());
  }
  return y;
}

void add_outer(Matrix& acc, double s, const double* u, std::size_t nu,
               const double* v, std::size_t nv) {
  if (acc.rows() != nu || acc.cols() != nv) {
    throw ShapeError("add_outer: accumulator shape mismatch");
  }
  for (std::size_t i = 0; i < nu; ++i) {
    kernels::axpy(acc.row(i), s * u[i], v, nv);
  }
}

}  // namespace fedalign
