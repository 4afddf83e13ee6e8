#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spn {

/// Dense vector of doubles. Thin value type over std::vector with the
/// arithmetic the solvers need.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vector(std::initializer_list<double> init) : data_(init) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  /// Contiguous slice [offset, offset + count) as a new vector.
  Vector segment(std::size_t offset, std::size_t count) const;
  void set_segment(std::size_t offset, const Vector& v);

  Vector& operator+=(const Vector& other);
  Vector& operator-=(const Vector& other);
  Vector& operator*=(double a) noexcept;

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

Vector operator+(Vector a, const Vector& b);
Vector operator-(Vector a, const Vector& b);
Vector operator-(Vector a);
Vector operator*(double s, Vector a);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& a);
/// y += a * x
void axpy(double a, const Vector& x, Vector& y);
/// Elementwise product.
Vector hadamard(const Vector& a, const Vector& b);
Vector concat(std::initializer_list<const Vector*> parts);
bool all_finite(const Vector& v) noexcept;

/// Compressed sparse row matrix. Rows hold strictly increasing column
/// indices; the structure is validated on construction and immutable after.
class CsrMatrix {
 public:
  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };

  CsrMatrix() = default;
  CsrMatrix(std::size_t nrows, std::size_t ncols, std::vector<std::size_t> row_ptr,
            std::vector<std::size_t> col_idx, std::vector<double> values);

  /// Duplicates are summed; explicit zeros are kept only if `keep_zeros`.
  static CsrMatrix from_triplets(std::size_t nrows, std::size_t ncols,
                                 std::vector<Triplet> triplets, bool keep_zeros = false);
  static CsrMatrix identity(std::size_t n);
  /// Row-major dense input, zeros dropped.
  static CsrMatrix from_dense(std::size_t nrows, std::size_t ncols,
                              std::span<const double> row_major);

  std::size_t rows() const noexcept { return nrows_; }
  std::size_t cols() const noexcept { return ncols_; }
  std::size_t nnz() const noexcept { return values_.size(); }
  const std::vector<std::size_t>& row_ptr() const noexcept { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const noexcept { return col_idx_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Entry lookup by binary search within the row; zero when absent.
  double at(std::size_t i, std::size_t j) const;
  std::vector<double> to_dense() const;  // row-major
  double frobenius_norm() const;

  CsrMatrix transpose() const;

  bool operator==(const CsrMatrix&) const = default;

 private:
  std::size_t nrows_ = 0;
  std::size_t ncols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

/// A*v, summed left to right within each row.
Vector csr_matvec(const CsrMatrix& a, const Vector& v);
/// A^T*v without forming A^T.
Vector csr_matvec_transpose(const CsrMatrix& a, const Vector& v);
/// Sparse product A*B.
CsrMatrix csr_multiply(const CsrMatrix& a, const CsrMatrix& b);
/// A^T diag(w) A, assembled.
CsrMatrix weighted_gram(const CsrMatrix& a, const Vector& w);
/// diag(A^T diag(w) A) without assembling the product.
Vector weighted_gram_diagonal(const CsrMatrix& a, const Vector& w);
CsrMatrix csr_add(const CsrMatrix& a, const CsrMatrix& b, double beta = 1.0);

CsrMatrix kron(const CsrMatrix& a, const CsrMatrix& b);
CsrMatrix block_diag(std::span<const CsrMatrix> blocks);
CsrMatrix vstack(std::span<const CsrMatrix> blocks);

/// (N-1) x N forward difference, +1 on the diagonal and -1 right of it.
CsrMatrix diff_matrix_1d(std::size_t n);
/// Block diagonal with `nangles` copies of the square npix x npix detector
/// difference (-1 diagonal, +1 superdiagonal).
CsrMatrix phase_step_diff_matrix(std::size_t npix, std::size_t nangles);

/// Abstract linear map. Implementations must make apply_transpose the exact
/// adjoint of apply.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual std::size_t rows() const = 0;
  virtual std::size_t cols() const = 0;
  virtual Vector apply(const Vector& v) const = 0;
  virtual Vector apply_transpose(const Vector& v) const = 0;
  /// diag(Op^T Op), when cheaply available.
  virtual std::optional<Vector> gram_diagonal() const { return std::nullopt; }
};

class CsrOperator final : public LinearOperator {
 public:
  explicit CsrOperator(const CsrMatrix& a) : a_(&a) {}
  std::size_t rows() const override { return a_->rows(); }
  std::size_t cols() const override { return a_->cols(); }
  Vector apply(const Vector& v) const override { return csr_matvec(*a_, v); }
  Vector apply_transpose(const Vector& v) const override {
    return csr_matvec_transpose(*a_, v);
  }
  std::optional<Vector> gram_diagonal() const override {
    return weighted_gram_diagonal(*a_, Vector(a_->rows(), 1.0));
  }

 private:
  const CsrMatrix* a_;
};

/// Square symmetric operator defined by a callable; apply_transpose == apply.
class SymmetricFunctionOperator final : public LinearOperator {
 public:
  using Fn = std::function<Vector(const Vector&)>;
  SymmetricFunctionOperator(std::size_t n, Fn fn) : n_(n), fn_(std::move(fn)) {}
  std::size_t rows() const override { return n_; }
  std::size_t cols() const override { return n_; }
  Vector apply(const Vector& v) const override { return fn_(v); }
  Vector apply_transpose(const Vector& v) const override { return fn_(v); }

 private:
  std::size_t n_;
  Fn fn_;
};

struct CgResult {
  Vector x;
  int iterations = 0;
  bool converged = false;
  double relative_residual = 0.0;
};

/// Plain conjugate gradients for a symmetric positive definite operator.
/// Stops when the recursively updated residual satisfies
/// ||r|| <= rel_tol * ||rhs||. A zero rhs returns x = 0 with 0 iterations.
CgResult cg_solve(const LinearOperator& op, const Vector& rhs, double rel_tol, int max_iter);

/// Conjugate gradients with the diagonal preconditioner M^{-1} = diag(inv_diag).
/// Same stopping rule as cg_solve, on the unpreconditioned residual.
CgResult pcg_solve(const LinearOperator& op, const Vector& rhs, const Vector& inv_diag,
                   double rel_tol, int max_iter);

// Binary CSR format: "CSR1", u64 nrows, ncols, nnz (little-endian), then
// row_ptr and col_idx as u64 and values as f64.
void write_csr(std::ostream& out, const CsrMatrix& a);
CsrMatrix read_csr(std::istream& in);
void write_csr_file(const std::string& path, const CsrMatrix& a);
CsrMatrix read_csr_file(const std::string& path);

}  // namespace spn
