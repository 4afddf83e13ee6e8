#pragma once

#include <cstddef>
#include <memory>
#include <optional>

#include "spn/linalg.hpp"

namespace spn {

/// Convex, twice continuously differentiable penalty Psi: R^n -> R.
class Regularizer {
 public:
  virtual ~Regularizer() = default;

  virtual std::size_t dim() const = 0;
  virtual double value(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const = 0;
  virtual Vector hessian_apply(const Vector& x, const Vector& v) const = 0;

  /// Assembled Hessian, when the regularizer can provide one.
  virtual std::optional<CsrMatrix> hessian_matrix(const Vector& /*x*/) const {
    return std::nullopt;
  }

  /// diag of the Hessian, when the regularizer can provide it cheaply.
  virtual std::optional<Vector> hessian_diagonal(const Vector& /*x*/) const {
    return std::nullopt;
  }

  /// Factor L of a Hessian of the form L^T diag(w(x)) L, or nullptr.
  virtual const CsrMatrix* hessian_factor() const { return nullptr; }
  /// The weights w(x) belonging to hessian_factor(). Throws if there is no factor.
  virtual Vector hessian_factor_weights(const Vector& x) const;

  /// The Hessian at x frozen as an operator, for repeated application.
  /// The default captures x and forwards to hessian_apply.
  virtual std::shared_ptr<const LinearOperator> hessian_operator(const Vector& x) const;

  /// Psi(x + dx) - Psi(x). Implementations override this to avoid the
  /// cancellation of subtracting two nearly equal values.
  virtual double value_difference(const Vector& x, const Vector& dx) const;
};

/// Psi(x) = sum_i sqrt([Lx]_i^2 + xi). With L = I this smooths the l1 norm;
/// with the stacked finite-difference L it smooths anisotropic TV.
class SmoothedL1 final : public Regularizer {
 public:
  SmoothedL1(CsrMatrix l, double xi);

  std::size_t dim() const override { return l_.cols(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Vector hessian_apply(const Vector& x, const Vector& v) const override;
  std::optional<CsrMatrix> hessian_matrix(const Vector& x) const override;
  std::optional<Vector> hessian_diagonal(const Vector& x) const override;
  std::shared_ptr<const LinearOperator> hessian_operator(const Vector& x) const override;
  double value_difference(const Vector& x, const Vector& dx) const override;
  const CsrMatrix* hessian_factor() const override { return &l_; }
  Vector hessian_factor_weights(const Vector& x) const override { return hessian_weights(x); }

  const CsrMatrix& operator_matrix() const noexcept { return l_; }
  double xi() const noexcept { return xi_; }

  /// Diagonal of the Hessian weight matrix: xi / ([Lx]_i^2 + xi)^{3/2}.
  Vector hessian_weights(const Vector& x) const;

 private:
  CsrMatrix l_;
  CsrMatrix lt_;
  double xi_;
};

/// Psi(x) = 1/2 ||Lx||^2 (Tikhonov). Mostly useful as a test case where the
/// quadratic model of Psi is exact.
class QuadraticRegularizer final : public Regularizer {
 public:
  explicit QuadraticRegularizer(CsrMatrix l);

  std::size_t dim() const override { return l_.cols(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Vector hessian_apply(const Vector& x, const Vector& v) const override;
  std::optional<CsrMatrix> hessian_matrix(const Vector& x) const override;
  std::optional<Vector> hessian_diagonal(const Vector& x) const override;
  std::shared_ptr<const LinearOperator> hessian_operator(const Vector& x) const override;
  double value_difference(const Vector& x, const Vector& dx) const override;
  const CsrMatrix* hessian_factor() const override { return &l_; }
  Vector hessian_factor_weights(const Vector& x) const override;

 private:
  CsrMatrix l_;
  CsrMatrix gram_;
};

/// Block-diagonal anisotropic TV operator for `ncomponents` column-stacked
/// npix x npix images. Each block is [Dt (x) I_N; I_N (x) Dt] with Dt the
/// (N-1) x N forward difference, so the shape is
/// ncomponents*(2N^2 - 2N) x ncomponents*N^2.
CsrMatrix build_tv_operator(std::size_t npix, std::size_t ncomponents);

}  // namespace spn
