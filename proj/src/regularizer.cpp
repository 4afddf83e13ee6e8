#include "spn/regularizer.hpp"

#include <cmath>
#include <vector>

#include "spn/error.hpp"

namespace spn {

namespace {

void require_dim(const Regularizer& r, const Vector& x, const char* what) {
  if (x.size() != r.dim()) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(r.dim()) +
                         ", got " + std::to_string(x.size()));
  }
}

/// Operator that owns its assembled matrix.
class OwnedCsrOperator final : public LinearOperator {
 public:
  explicit OwnedCsrOperator(CsrMatrix a) : a_(std::move(a)) {}
  std::size_t rows() const override { return a_.rows(); }
  std::size_t cols() const override { return a_.cols(); }
  Vector apply(const Vector& v) const override { return csr_matvec(a_, v); }
  Vector apply_transpose(const Vector& v) const override { return csr_matvec_transpose(a_, v); }

 private:
  CsrMatrix a_;
};

}  // namespace

std::shared_ptr<const LinearOperator> Regularizer::hessian_operator(const Vector& x) const {
  return std::make_shared<SymmetricFunctionOperator>(
      dim(), [this, x](const Vector& v) { return hessian_apply(x, v); });
}

Vector Regularizer::hessian_factor_weights(const Vector& /*x*/) const {
  throw ConfigError("Regularizer: no Hessian factorisation available");
}

double Regularizer::value_difference(const Vector& x, const Vector& dx) const {
  return value(x + dx) - value(x);
}

// ---------------------------------------------------------------------------

SmoothedL1::SmoothedL1(CsrMatrix l, double xi) : l_(std::move(l)), lt_(l_.transpose()), xi_(xi) {
  if (!(xi_ > 0.0) || !std::isfinite(xi_)) {
    throw ConfigError("SmoothedL1: smoothing parameter must be positive and finite");
  }
}

double SmoothedL1::value(const Vector& x) const {
  require_dim(*this, x, "SmoothedL1::value");
  const Vector y = csr_matvec(l_, x);
  double s = 0.0;
  for (double yi : y) s += std::sqrt(yi * yi + xi_);
  return s;
}

Vector SmoothedL1::gradient(const Vector& x) const {
  require_dim(*this, x, "SmoothedL1::gradient");
  Vector y = csr_matvec(l_, x);
  for (double& yi : y) yi = yi / std::sqrt(yi * yi + xi_);
  return csr_matvec(lt_, y);
}

Vector SmoothedL1::hessian_weights(const Vector& x) const {
  require_dim(*this, x, "SmoothedL1::hessian_weights");
  Vector w = csr_matvec(l_, x);
  for (double& yi : w) {
    const double q = yi * yi + xi_;
    yi = xi_ / (q * std::sqrt(q));
  }
  return w;
}

Vector SmoothedL1::hessian_apply(const Vector& x, const Vector& v) const {
  require_dim(*this, v, "SmoothedL1::hessian_apply");
  const Vector w = hessian_weights(x);
  return csr_matvec(lt_, hadamard(w, csr_matvec(l_, v)));
}

std::optional<CsrMatrix> SmoothedL1::hessian_matrix(const Vector& x) const {
  return weighted_gram(l_, hessian_weights(x));
}

std::optional<Vector> SmoothedL1::hessian_diagonal(const Vector& x) const {
  return weighted_gram_diagonal(l_, hessian_weights(x));
}

std::shared_ptr<const LinearOperator> SmoothedL1::hessian_operator(const Vector& x) const {
  return std::make_shared<OwnedCsrOperator>(weighted_gram(l_, hessian_weights(x)));
}

double SmoothedL1::value_difference(const Vector& x, const Vector& dx) const {
  require_dim(*this, x, "SmoothedL1::value_difference");
  require_dim(*this, dx, "SmoothedL1::value_difference");
  const Vector y0 = csr_matvec(l_, x);
  const Vector dy = csr_matvec(l_, dx);
  // sqrt(a^2+xi) - sqrt(b^2+xi) = (a-b)(a+b) / (sqrt(a^2+xi) + sqrt(b^2+xi))
  double s = 0.0;
  for (std::size_t i = 0; i < y0.size(); ++i) {
    const double b = y0[i];
    const double a = b + dy[i];
    s += dy[i] * (a + b) / (std::sqrt(a * a + xi_) + std::sqrt(b * b + xi_));
  }
  return s;
}

// ---------------------------------------------------------------------------

QuadraticRegularizer::QuadraticRegularizer(CsrMatrix l)
    : l_(std::move(l)), gram_(weighted_gram(l_, Vector(l_.rows(), 1.0))) {}

double QuadraticRegularizer::value(const Vector& x) const {
  require_dim(*this, x, "QuadraticRegularizer::value");
  const Vector y = csr_matvec(l_, x);
  return 0.5 * dot(y, y);
}

Vector QuadraticRegularizer::gradient(const Vector& x) const {
  require_dim(*this, x, "QuadraticRegularizer::gradient");
  return csr_matvec(gram_, x);
}

Vector QuadraticRegularizer::hessian_apply(const Vector& /*x*/, const Vector& v) const {
  require_dim(*this, v, "QuadraticRegularizer::hessian_apply");
  return csr_matvec(gram_, v);
}

std::optional<CsrMatrix> QuadraticRegularizer::hessian_matrix(const Vector& /*x*/) const {
  return gram_;
}

std::optional<Vector> QuadraticRegularizer::hessian_diagonal(const Vector& /*x*/) const {
  return weighted_gram_diagonal(l_, Vector(l_.rows(), 1.0));
}

Vector QuadraticRegularizer::hessian_factor_weights(const Vector& /*x*/) const {
  return Vector(l_.rows(), 1.0);
}

std::shared_ptr<const LinearOperator> QuadraticRegularizer::hessian_operator(
    const Vector& /*x*/) const {
  return std::make_shared<OwnedCsrOperator>(gram_);
}

double QuadraticRegularizer::value_difference(const Vector& x, const Vector& dx) const {
  const Vector y = csr_matvec(l_, x);
  const Vector dy = csr_matvec(l_, dx);
  return dot(dy, y) + 0.5 * dot(dy, dy);
}

// ---------------------------------------------------------------------------

CsrMatrix build_tv_operator(std::size_t npix, std::size_t ncomponents) {
  if (npix < 2) throw DimensionError("build_tv_operator: npix must be >= 2");
  if (ncomponents < 1) throw DimensionError("build_tv_operator: ncomponents must be >= 1");
  const CsrMatrix dt = diff_matrix_1d(npix);
  const CsrMatrix eye = CsrMatrix::identity(npix);
  const CsrMatrix parts[] = {kron(dt, eye), kron(eye, dt)};
  const CsrMatrix single = vstack(parts);
  const std::vector<CsrMatrix> blocks(ncomponents, single);
  return block_diag(blocks);
}

}  // namespace spn
