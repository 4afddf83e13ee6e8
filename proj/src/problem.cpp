#include "spn/problem.hpp"

#include <cmath>

#include "spn/error.hpp"

namespace spn {

double constraint_value(const InverseProblem& problem, const Vector& x) {
  const Vector r = problem.forward(x) - problem.data();
  const double nr = norm2(r);
  const double sigma = problem.sigma();
  return 0.5 * (nr - sigma) * (nr + sigma);
}

Vector constraint_gradient(const InverseProblem& problem, const Vector& x) {
  const Vector r = problem.forward(x) - problem.data();
  return problem.jacobian(x)->apply_transpose(r);
}

LinearProblem::LinearProblem(CsrMatrix a, Vector b, double sigma)
    : a_(std::move(a)), b_(std::move(b)), sigma_(sigma) {
  if (b_.size() != a_.rows()) throw DimensionError("LinearProblem: data length != rows of A");
  if (!(sigma_ >= 0.0) || !std::isfinite(sigma_)) {
    throw ConfigError("LinearProblem: sigma must be finite and non-negative");
  }
}

std::shared_ptr<const LinearOperator> LinearProblem::jacobian(const Vector& x) const {
  if (x.size() != a_.cols()) throw DimensionError("LinearProblem::jacobian: wrong x length");
  // The operator refers to a_; the problem must outlive it.
  return std::make_shared<CsrOperator>(a_);
}

}  // namespace spn
