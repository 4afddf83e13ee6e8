#pragma once

#include <cstddef>
#include <memory>
#include <optional>

#include "spn/linalg.hpp"
#include "spn/problem.hpp"
#include "spn/regularizer.hpp"

namespace spn {

/// Which objective the linearised sub-problem minimises.
enum class SubproblemModel {
  /// min Psi(x_k + p)  s.t.  1/2 ||J_k p + s_k - b||^2 = sigma^2 / 2
  FullObjective,
  /// min grad Psi(x_k)^T p + 1/2 p^T H_k p  s.t.  the same constraint
  QuadraticObjective,
};

/// Everything the inner solver needs about the outer iterate x_k. Built once
/// per outer iteration and read-only afterwards.
struct SubproblemContext {
  Vector x;         // x_k
  Vector s;         // s(x_k)
  Vector residual;  // s(x_k) - b
  std::shared_ptr<const LinearOperator> jacobian;
  double c = 0.0;   // c(x_k)
  Vector grad_c;    // J_k^T (s_k - b)
  std::optional<Vector> jtj_diagonal;  // diag(J_k^T J_k), for preconditioning
  double sigma = 0.0;
  const Regularizer* regularizer = nullptr;
  SubproblemModel model = SubproblemModel::FullObjective;

  // Frozen at x_k, used by the quadratic model.
  Vector grad_psi;
  std::shared_ptr<const LinearOperator> hessian_psi;
  std::optional<Vector> hessian_psi_diagonal;

  static SubproblemContext build(const InverseProblem& problem, const Regularizer& regularizer,
                                 const Vector& x, SubproblemModel model);

  std::size_t dim() const noexcept { return x.size(); }
};

/// F^(k)(p, lambda), or its quadratic-model counterpart, as an (n+1)-vector
/// [first-order block; constraint row].
Vector subproblem_residual(const SubproblemContext& ctx, const Vector& p, double lambda);

struct NewtonStep {
  Vector dp;
  double dlambda = 0.0;
  int cg_iterations = 0;
};

/// One Newton step on the sub-problem KKT system, by block elimination:
/// (H + lambda M) y1 = -F1, (H + lambda M) y2 = w with w = M p + grad c and
/// M = J^T J, then dlambda = (w^T y1 + F2) / (w^T y2) and dp = y1 - dlambda y2.
///
/// CG is Jacobi-preconditioned when diag(H) and diag(J^T J) are available.
/// `residual` must be subproblem_residual(ctx, p, lambda). Throws
/// NumericalError if CG fails or the Schur complement w^T y2 vanishes.
NewtonStep newton_kkt_step(const SubproblemContext& ctx, const Vector& p, double lambda,
                           const Vector& residual, double cg_rel_tol, int cg_max_iter);

enum class InnerMethod {
  /// Newton steps restricted to a growing orthonormal basis that is expanded
  /// with the first residual block; small dense KKT solves, no inner CG.
  ProjectedNewton,
  /// Full-space Newton with CG block elimination (newton_kkt_step).
  FullSpaceNewton,
};

struct SubproblemOptions {
  InnerMethod method = InnerMethod::ProjectedNewton;
  double tol = 1e-7;
  double lambda_init = 1e5;
  int max_inner = 500;
  int max_halvings = 30;
  double lambda_floor = 1e-12;
  /// Armijo constant for the residual-norm decrease test.
  double decrease = 1e-4;
  /// 0 selects 5 * n.
  int cg_max_iter = 0;
  /// After convergence, push the constraint row towards roundoff with
  /// corrections that leave the first block unchanged to first order.
  bool restore_feasibility = false;
};

struct SubproblemSolution {
  Vector p;
  double lambda = 0.0;
  double residual_norm = 0.0;
  int inner_iterations = 0;
  int cg_iterations = 0;
  bool converged = false;
};

/// Drives ||F^(k)(p, lambda)|| below opts.tol starting from p = 0 and
/// lambda = opts.lambda_init. Steps are halved until the residual norm
/// decreases and lambda stays positive. On stagnation or when max_inner is
/// reached the best iterate is returned with converged = false.
SubproblemSolution solve_subproblem(const SubproblemContext& ctx, const SubproblemOptions& opts);

}  // namespace spn
