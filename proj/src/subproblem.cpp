#include "spn/subproblem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "spn/error.hpp"

namespace spn {

namespace {

struct ResidualParts {
  Vector f;  // n+1
  Vector w;  // grad c + M p
};

ResidualParts residual_parts(const SubproblemContext& ctx, const Vector& p, const Vector& jp,
                             double lambda) {
  const std::size_t n = ctx.dim();
  ResidualParts out;
  out.w = ctx.grad_c + ctx.jacobian->apply_transpose(jp);

  Vector first = ctx.model == SubproblemModel::FullObjective
                     ? ctx.regularizer->gradient(ctx.x + p)
                     : ctx.grad_psi + ctx.hessian_psi->apply(p);
  axpy(lambda, out.w, first);

  const double constraint = ctx.c + dot(ctx.grad_c, p) + 0.5 * dot(jp, jp);
  out.f = Vector(n + 1);
  out.f.set_segment(0, first);
  out.f[n] = constraint;
  return out;
}

ResidualParts residual_parts(const SubproblemContext& ctx, const Vector& p, double lambda) {
  if (p.size() != ctx.dim()) throw DimensionError("subproblem_residual: p has wrong length");
  return residual_parts(ctx, p, ctx.jacobian->apply(p), lambda);
}

NewtonStep kkt_step(const SubproblemContext& ctx, const Vector& p, double lambda,
                    const Vector& residual, const Vector& w, double cg_rel_tol,
                    int cg_max_iter) {
  const std::size_t n = ctx.dim();
  if (residual.size() != n + 1) throw DimensionError("newton_kkt_step: residual length != n+1");
  const std::shared_ptr<const LinearOperator> hess =
      ctx.model == SubproblemModel::FullObjective ? ctx.regularizer->hessian_operator(ctx.x + p)
                                                  : ctx.hessian_psi;
  const auto& jac = *ctx.jacobian;
  const SymmetricFunctionOperator kkt_block(n, [&](const Vector& v) {
    Vector out = hess->apply(v);
    axpy(lambda, jac.apply_transpose(jac.apply(v)), out);
    return out;
  });
  const int max_it = cg_max_iter > 0 ? cg_max_iter : static_cast<int>(5 * n);

  std::optional<Vector> inv_diag;
  if (ctx.jtj_diagonal) {
    std::optional<Vector> h_diag = ctx.model == SubproblemModel::FullObjective
                                       ? ctx.regularizer->hessian_diagonal(ctx.x + p)
                                       : ctx.hessian_psi_diagonal;
    if (h_diag) {
      inv_diag = std::move(h_diag);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (*inv_diag)[i] + lambda * (*ctx.jtj_diagonal)[i];
        (*inv_diag)[i] = d > 0.0 ? 1.0 / d : 1.0;
      }
    }
  }
  auto solve = [&](const Vector& rhs) {
    return inv_diag ? pcg_solve(kkt_block, rhs, *inv_diag, cg_rel_tol, max_it)
                    : cg_solve(kkt_block, rhs, cg_rel_tol, max_it);
  };

  const Vector minus_f1 = -residual.segment(0, n);
  const double f2 = residual[n];
  const CgResult y1 = solve(minus_f1);
  const CgResult y2 = solve(w);
  for (const CgResult* r : {&y1, &y2}) {
    if (!r->converged) {
      std::ostringstream msg;
      msg << "newton_kkt_step: CG did not converge in " << r->iterations
          << " iterations (relative residual " << r->relative_residual << ", target "
          << cg_rel_tol << ", lambda " << lambda << ")";
      throw NumericalError(msg.str());
    }
  }
  const double schur = dot(w, y2.x);
  if (!(schur > 0.0) || !std::isfinite(schur)) {
    throw NumericalError("newton_kkt_step: degenerate Schur complement w^T (H + lambda M)^{-1} w = " +
                         std::to_string(schur));
  }
  NewtonStep step;
  step.dlambda = (dot(w, y1.x) + f2) / schur;
  step.dp = y1.x;
  axpy(-step.dlambda, y2.x, step.dp);
  step.cg_iterations = y1.iterations + y2.iterations;
  return step;
}

/// Drives the constraint row towards roundoff while leaving the first block
/// unchanged to first order: dp = -dlambda y, (H + lambda M) y = w,
/// dlambda = F2 / (w^T y). Each step is kept only if the residual stays
/// within tol and the constraint row shrinks.
void restore_feasibility(const SubproblemContext& ctx, const SubproblemOptions& opts,
                         SubproblemSolution& sol, ResidualParts& cur) {
  constexpr int kSteps = 2;
  const std::size_t n = ctx.dim();
  for (int i = 0; i < kSteps; ++i) {
    const double row = cur.f[n];
    if (std::abs(row) <= 1e-15 * std::max(1.0, ctx.sigma * ctx.sigma)) return;
    Vector only_row(n + 1);
    only_row[n] = row;
    NewtonStep step;
    try {
      step = kkt_step(ctx, sol.p, sol.lambda, only_row, cur.w, 1e-10, opts.cg_max_iter);
    } catch (const NumericalError&) {
      return;
    }
    sol.cg_iterations += step.cg_iterations;
    const double lambda = sol.lambda + step.dlambda;
    if (!(lambda > 0.0)) return;
    Vector p = sol.p + step.dp;
    ResidualParts trial = residual_parts(ctx, p, lambda);
    const double norm = norm2(trial.f);
    if (!(norm <= opts.tol && std::abs(trial.f[n]) < std::abs(row))) return;
    sol.p = std::move(p);
    sol.lambda = lambda;
    sol.residual_norm = norm;
    cur = std::move(trial);
  }
}

}  // namespace

SubproblemContext SubproblemContext::build(const InverseProblem& problem,
                                           const Regularizer& regularizer, const Vector& x,
                                           SubproblemModel model) {
  if (x.size() != problem.num_unknowns() || regularizer.dim() != problem.num_unknowns()) {
    throw DimensionError("SubproblemContext: inconsistent dimensions");
  }
  SubproblemContext ctx;
  ctx.x = x;
  ctx.s = problem.forward(x);
  ctx.residual = ctx.s - problem.data();
  ctx.jacobian = problem.jacobian(x);
  ctx.sigma = problem.sigma();
  const double nr = norm2(ctx.residual);
  ctx.c = 0.5 * (nr - ctx.sigma) * (nr + ctx.sigma);
  ctx.grad_c = ctx.jacobian->apply_transpose(ctx.residual);
  ctx.jtj_diagonal = ctx.jacobian->gram_diagonal();
  ctx.regularizer = &regularizer;
  ctx.model = model;
  if (model == SubproblemModel::QuadraticObjective) {
    ctx.grad_psi = regularizer.gradient(x);
    ctx.hessian_psi = regularizer.hessian_operator(x);
    ctx.hessian_psi_diagonal = regularizer.hessian_diagonal(x);
  }
  return ctx;
}

Vector subproblem_residual(const SubproblemContext& ctx, const Vector& p, double lambda) {
  return residual_parts(ctx, p, lambda).f;
}

NewtonStep newton_kkt_step(const SubproblemContext& ctx, const Vector& p, double lambda,
                           const Vector& residual, double cg_rel_tol, int cg_max_iter) {
  const Vector w = ctx.grad_c + ctx.jacobian->apply_transpose(ctx.jacobian->apply(p));
  return kkt_step(ctx, p, lambda, residual, w, cg_rel_tol, cg_max_iter);
}

namespace {

SubproblemSolution solve_full_space(const SubproblemContext& ctx, const SubproblemOptions& opts) {
  SubproblemSolution sol;
  sol.p = Vector(ctx.dim());
  sol.lambda = opts.lambda_init;
  ResidualParts cur = residual_parts(ctx, sol.p, sol.lambda);
  sol.residual_norm = norm2(cur.f);

  while (sol.residual_norm > opts.tol && sol.inner_iterations < opts.max_inner) {
    // Inexact Newton: linear solves only as accurate as the current residual warrants.
    const double cg_tol = std::max(1e-2 * std::min(1.0, sol.residual_norm), 1e-12);
    const NewtonStep step =
        kkt_step(ctx, sol.p, sol.lambda, cur.f, cur.w, cg_tol, opts.cg_max_iter);
    sol.cg_iterations += step.cg_iterations;

    double beta = 1.0;
    if (sol.lambda + step.dlambda <= 0.0) beta = 0.5 * sol.lambda / -step.dlambda;

    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, beta *= 0.5) {
      Vector p_trial = sol.p;
      axpy(beta, step.dp, p_trial);
      const double lambda_trial = std::max(sol.lambda + beta * step.dlambda, opts.lambda_floor);
      ResidualParts trial = residual_parts(ctx, p_trial, lambda_trial);
      const double trial_norm = norm2(trial.f);
      if (std::isfinite(trial_norm) && trial_norm <= (1.0 - opts.decrease * beta) * sol.residual_norm) {
        sol.p = std::move(p_trial);
        sol.lambda = lambda_trial;
        sol.residual_norm = trial_norm;
        cur = std::move(trial);
        accepted = true;
        break;
      }
    }
    ++sol.inner_iterations;
    if (!accepted) break;  // stagnation: no sufficient decrease along the Newton direction
  }
  if (opts.restore_feasibility && sol.residual_norm <= opts.tol) {
    restore_feasibility(ctx, opts, sol, cur);
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Projected Newton on a growing orthonormal basis V: Newton steps are taken
// on the KKT system restricted to p = V y, and V is expanded with the
// component of the first residual block outside span(V).

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::Map<const VectorXd> as_eigen(const Vector& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Vector from_eigen(const VectorXd& v) {
  Vector out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v[i];
  return out;
}

class ProjectedBasis {
 public:
  ProjectedBasis(const SubproblemContext& ctx, Eigen::Index capacity)
      : ctx_(ctx),
        factor_(ctx.regularizer != nullptr ? ctx.regularizer->hessian_factor() : nullptr),
        n_(static_cast<Eigen::Index>(ctx.dim())),
        m_(static_cast<Eigen::Index>(ctx.jacobian->rows())),
        max_cols_(std::min(capacity, n_)) {
    reserve(std::min<Eigen::Index>(max_cols_, 32));
  }

  Eigen::Index size() const { return k_; }
  auto v() const { return v_.leftCols(k_); }
  auto jv() const { return jv_.leftCols(k_); }
  auto gram() const { return gram_.topLeftCorner(k_, k_); }

  /// Orthonormalises `dir` against the basis and appends it. Returns false if
  /// the basis is full or `dir` lies (numerically) in its span.
  bool expand(const Vector& dir) {
    if (k_ >= max_cols_) return false;
    VectorXd q = as_eigen(dir);
    const double q0 = q.norm();
    if (!(q0 > 0.0) || !std::isfinite(q0)) return false;
    for (int pass = 0; pass < 2; ++pass) q -= v() * (v().transpose() * q);
    const double qn = q.norm();
    if (!(qn > 1e-12 * q0)) return false;
    q /= qn;
    if (k_ == v_.cols()) reserve(std::min(max_cols_, 2 * k_));
    v_.col(k_) = q;
    const Vector jq = ctx_.jacobian->apply(from_eigen(q));
    jv_.col(k_) = as_eigen(jq);
    if (factor_ != nullptr) lv_.col(k_) = as_eigen(csr_matvec(*factor_, from_eigen(q)));
    const VectorXd cross = jv_.leftCols(k_ + 1).transpose() * jv_.col(k_);
    gram_.block(k_, 0, 1, k_ + 1) = cross.transpose();
    gram_.block(0, k_, k_ + 1, 1) = cross;
    ++k_;
    return true;
  }

  /// V^T H V with H the model Hessian of Psi at x_k + p.
  MatrixXd reduced_hessian(const Vector& p) const {
    const bool frozen = ctx_.model == SubproblemModel::QuadraticObjective;
    if (factor_ != nullptr) {
      if (!frozen || !frozen_weights_) {
        const Vector w = ctx_.regularizer->hessian_factor_weights(frozen ? ctx_.x : ctx_.x + p);
        VectorXd root(static_cast<Eigen::Index>(w.size()));
        for (std::size_t i = 0; i < w.size(); ++i) root[static_cast<Eigen::Index>(i)] = std::sqrt(w[i]);
        if (frozen) frozen_weights_ = std::move(root);
        else return weighted_lv_gram(root);
      }
      return weighted_lv_gram(*frozen_weights_);
    }
    const std::shared_ptr<const LinearOperator> h =
        frozen ? ctx_.hessian_psi : ctx_.regularizer->hessian_operator(ctx_.x + p);
    MatrixXd hv(n_, k_);
    for (Eigen::Index j = 0; j < k_; ++j) {
      hv.col(j) = as_eigen(h->apply(from_eigen(v_.col(j))));
    }
    MatrixXd out = v().transpose() * hv;
    return 0.5 * (out + out.transpose());
  }

 private:
  MatrixXd weighted_lv_gram(const VectorXd& root_w) const {
    const MatrixXd s = root_w.asDiagonal() * lv_.leftCols(k_);
    MatrixXd out = MatrixXd::Zero(k_, k_);
    out.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose());
    return out.selfadjointView<Eigen::Lower>();
  }

  void reserve(Eigen::Index cols) {
    v_.conservativeResize(n_, cols);
    jv_.conservativeResize(m_, cols);
    gram_.conservativeResize(cols, cols);
    if (factor_ != nullptr) lv_.conservativeResize(static_cast<Eigen::Index>(factor_->rows()), cols);
  }

  const SubproblemContext& ctx_;
  const CsrMatrix* factor_ = nullptr;  // L with H = L^T diag(w) L
  Eigen::Index n_;
  Eigen::Index m_;
  Eigen::Index max_cols_;
  Eigen::Index k_ = 0;
  MatrixXd v_;
  MatrixXd jv_;
  MatrixXd lv_;
  MatrixXd gram_;
  mutable std::optional<VectorXd> frozen_weights_;
};

struct ProjectedPoint {
  VectorXd y;
  double lambda = 0.0;
  Vector p;
  ResidualParts parts;
  double norm = 0.0;
};

ProjectedPoint make_point(const SubproblemContext& ctx, const ProjectedBasis& basis, VectorXd y,
                          double lambda) {
  ProjectedPoint pt;
  pt.y = std::move(y);
  pt.lambda = lambda;
  if (basis.size() == 0) {
    pt.p = Vector(ctx.dim());
    pt.parts = residual_parts(ctx, pt.p, Vector(ctx.jacobian->rows()), lambda);
  } else {
    pt.p = from_eigen(basis.v() * pt.y);
    pt.parts = residual_parts(ctx, pt.p, from_eigen(basis.jv() * pt.y), lambda);
  }
  pt.norm = norm2(pt.parts.f);
  return pt;
}

struct ProjectedStep {
  VectorXd dy;
  double dlambda = 0.0;
  bool ok = false;
};

/// Solves [K, w; w^T, 0] [dy; dlambda] = -[r1; r2] with K = V^T (H + lambda J^T J) V.
ProjectedStep projected_kkt_step(const ProjectedBasis& basis,
                                 const ProjectedPoint& pt, const VectorXd& r1, double r2) {
  MatrixXd k = basis.reduced_hessian(pt.p);
  k.noalias() += pt.lambda * basis.gram();
  const VectorXd w = basis.v().transpose() * as_eigen(pt.parts.w);

  Eigen::LDLT<MatrixXd> ldlt(k);
  ProjectedStep step;
  if (ldlt.info() != Eigen::Success || !(ldlt.isPositive())) return step;
  const VectorXd z1 = ldlt.solve(-r1);
  const VectorXd z2 = ldlt.solve(w);
  const double schur = w.dot(z2);
  if (!(schur > 0.0) || !std::isfinite(schur)) return step;
  step.dlambda = (w.dot(z1) + r2) / schur;
  step.dy = z1 - step.dlambda * z2;
  step.ok = step.dy.allFinite() && std::isfinite(step.dlambda);
  return step;
}

VectorXd pad(const VectorXd& y, Eigen::Index size) {
  VectorXd out = VectorXd::Zero(size);
  out.head(y.size()) = y;
  return out;
}

SubproblemSolution solve_projected(const SubproblemContext& ctx, const SubproblemOptions& opts) {
  const std::size_t n = ctx.dim();
  ProjectedBasis basis(ctx, static_cast<Eigen::Index>(opts.max_inner) + 2);
  ProjectedPoint cur = make_point(ctx, basis, VectorXd(), opts.lambda_init);

  basis.expand(ctx.grad_c);
  basis.expand(cur.parts.f.segment(0, n));
  cur.y = pad(cur.y, basis.size());

  SubproblemSolution sol;
  while (cur.norm > opts.tol && sol.inner_iterations < opts.max_inner) {
    const VectorXd r1 = basis.v().transpose() * as_eigen(cur.parts.f.segment(0, n));
    const ProjectedStep step = projected_kkt_step(basis, cur, r1, cur.parts.f[n]);
    ++sol.inner_iterations;

    bool accepted = false;
    if (step.ok) {
      double beta = 1.0;
      if (cur.lambda + step.dlambda <= 0.0) beta = 0.5 * cur.lambda / -step.dlambda;
      for (int h = 0; h <= opts.max_halvings; ++h, beta *= 0.5) {
        const double lambda_trial = std::max(cur.lambda + beta * step.dlambda, opts.lambda_floor);
        ProjectedPoint trial = make_point(ctx, basis, cur.y + beta * step.dy, lambda_trial);
        if (std::isfinite(trial.norm) && trial.norm <= (1.0 - opts.decrease * beta) * cur.norm) {
          cur = std::move(trial);
          accepted = true;
          break;
        }
      }
    }
    if (cur.norm <= opts.tol) break;
    const bool grown = basis.expand(cur.parts.f.segment(0, n));
    cur.y = pad(cur.y, basis.size());
    if (!accepted && !grown) break;  // stagnation
  }

  if (opts.restore_feasibility && cur.norm <= opts.tol) {
    constexpr int kSteps = 2;
    for (int i = 0; i < kSteps; ++i) {
      const double row = cur.parts.f[n];
      if (std::abs(row) <= 1e-15 * std::max(1.0, ctx.sigma * ctx.sigma)) break;
      const ProjectedStep step =
          projected_kkt_step(basis, cur, VectorXd::Zero(basis.size()), row);
      if (!step.ok || !(cur.lambda + step.dlambda > 0.0)) break;
      ProjectedPoint trial = make_point(ctx, basis, cur.y + step.dy, cur.lambda + step.dlambda);
      if (!(trial.norm <= opts.tol && std::abs(trial.parts.f[n]) < std::abs(row))) break;
      cur = std::move(trial);
    }
  }

  sol.p = std::move(cur.p);
  sol.lambda = cur.lambda;
  sol.residual_norm = cur.norm;
  return sol;
}

}  // namespace

SubproblemSolution solve_subproblem(const SubproblemContext& ctx, const SubproblemOptions& opts) {
  if (!(opts.tol > 0.0)) throw ConfigError("solve_subproblem: tol must be positive");
  if (!(opts.lambda_init > 0.0)) throw ConfigError("solve_subproblem: lambda_init must be positive");
  if (opts.max_inner < 1) throw ConfigError("solve_subproblem: max_inner must be >= 1");
  SubproblemSolution sol = opts.method == InnerMethod::ProjectedNewton ? solve_projected(ctx, opts)
                                                                        : solve_full_space(ctx, opts);
  sol.converged = sol.residual_norm <= opts.tol;
  return sol;
}

}  // namespace spn
