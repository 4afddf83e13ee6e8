#pragma once

#include <cstddef>
#include <memory>

#include "spn/linalg.hpp"

namespace spn {

/// Nonlinear least-squares data term with a noise level: a forward map
/// s: R^n -> R^m, its Jacobian, measured data b and noise estimate sigma.
/// The discrepancy constraint is c(x) = 1/2 ||s(x) - b||^2 - sigma^2 / 2.
class InverseProblem {
 public:
  virtual ~InverseProblem() = default;

  virtual std::size_t num_unknowns() const = 0;
  virtual std::size_t num_measurements() const = 0;
  virtual Vector forward(const Vector& x) const = 0;
  virtual std::shared_ptr<const LinearOperator> jacobian(const Vector& x) const = 0;
  virtual const Vector& data() const = 0;
  virtual double sigma() const = 0;
};

double constraint_value(const InverseProblem& problem, const Vector& x);
/// J(x)^T (s(x) - b)
Vector constraint_gradient(const InverseProblem& problem, const Vector& x);

/// s(x) = A x. The sub-problem of the sequential method is then exact.
class LinearProblem final : public InverseProblem {
 public:
  LinearProblem(CsrMatrix a, Vector b, double sigma);

  std::size_t num_unknowns() const override { return a_.cols(); }
  std::size_t num_measurements() const override { return a_.rows(); }
  Vector forward(const Vector& x) const override { return csr_matvec(a_, x); }
  std::shared_ptr<const LinearOperator> jacobian(const Vector& x) const override;
  const Vector& data() const override { return b_; }
  double sigma() const override { return sigma_; }

  const CsrMatrix& matrix() const noexcept { return a_; }

 private:
  CsrMatrix a_;
  Vector b_;
  double sigma_;
};

}  // namespace spn
