#pragma once

#include <cstddef>
#include <vector>

namespace fedalign {

using Vec = std::vector<double>;

// Dense row-major matrix of 64-bit floats.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  void add_scaled(const Matrix& x, double alpha);  // *this += alpha * x
  void scale(double alpha);
  double frobenius_norm() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// C = a * b; throws ShapeError when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

// y = m * x
Vec matvec(const Matrix& m, const Vec& x);

// y = m^T * x (accumulated row by row, SIMD-friendly for row-major storage)
Vec matvec_transposed(const Matrix& m, const Vec& x);

// acc += s * u * v^T
void add_outer(Matrix& acc, double s, const double* u, std::size_t nu,
               const double* v, std::size_t nv);

}  // namespace fedalign
