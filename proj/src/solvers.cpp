#include "spn/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spn/error.hpp"

namespace spn {

namespace {

struct PointEval {
  Vector s;
  Vector residual;
  double residual_norm = 0.0;
  double c = 0.0;
  std::shared_ptr<const LinearOperator> jacobian;
  Vector grad_c;
};

PointEval evaluate(const InverseProblem& problem, const Vector& x) {
  PointEval e;
  e.s = problem.forward(x);
  e.residual = e.s - problem.data();
  e.residual_norm = norm2(e.residual);
  const double sigma = problem.sigma();
  e.c = 0.5 * (e.residual_norm - sigma) * (e.residual_norm + sigma);
  e.jacobian = problem.jacobian(x);
  e.grad_c = e.jacobian->apply_transpose(e.residual);
  return e;
}

Vector stack_kkt(const Vector& grad_psi, const Vector& grad_c, double lambda, double c) {
  const std::size_t n = grad_psi.size();
  Vector f(n + 1);
  for (std::size_t i = 0; i < n; ++i) f[i] = grad_psi[i] + lambda * grad_c[i];
  f[n] = c;
  return f;
}

/// 1/2 ||r1||^2 - 1/2 ||r0||^2 summed termwise as 1/2 (r1 - r0)(r1 + r0).
double half_sq_norm_difference(const Vector& r1, const Vector& r0) {
  double s = 0.0;
  for (std::size_t i = 0; i < r1.size(); ++i) s += (r1[i] - r0[i]) * (r1[i] + r0[i]);
  return 0.5 * s;
}

double relative_change(const Vector& step, const Vector& x_new) {
  const double nx = norm2(x_new);
  const double nd = norm2(step);
  return nx > 0.0 ? nd / nx : nd;
}

int resolve_cg_max(int requested, std::size_t n) {
  return requested > 0 ? requested : static_cast<int>(5 * n);
}

struct GnStep {
  Vector p;
  int cg_iterations = 0;
};

/// Solves (J^T J + alpha H) p = -grad with CG.
GnStep gauss_newton_direction(const LinearOperator& jac, const LinearOperator* hess_psi,
                              double alpha, const Vector& grad, double rel_tol, int cg_max) {
  const std::size_t n = grad.size();
  const SymmetricFunctionOperator normal(n, [&](const Vector& v) {
    Vector out = jac.apply_transpose(jac.apply(v));
    if (hess_psi != nullptr && alpha != 0.0) axpy(alpha, hess_psi->apply(v), out);
    return out;
  });
  const CgResult cg = cg_solve(normal, -grad, rel_tol, cg_max);
  if (!cg.converged && !(cg.relative_residual < 1.0)) {
    throw NumericalError("Gauss-Newton: CG made no progress (relative residual " +
                         std::to_string(cg.relative_residual) + ")");
  }
  return {cg.x, cg.iterations};
}

void record_quality(const OuterConfig& config, const Vector& x,
                    std::optional<std::array<double, 3>>& slot) {
  if (config.quality) slot = config.quality(x);
}

enum class InnerTolRule { TauOverTen, Forcing };

SolveResult line_search_sqp(const InverseProblem& problem, const Regularizer& regularizer,
                            const OuterConfig& config, SubproblemModel model, InnerTolRule rule) {
  config.validate();
  const std::size_t n = problem.num_unknowns();
  if (regularizer.dim() != n) throw DimensionError("regularizer dimension != number of unknowns");

  SolveResult result;
  Vector x = initial_point(problem, config.initial_point_cg_tol, config.initial_point_max_iter,
                           config.cg_max_iter);
  PointEval ev = evaluate(problem, x);
  Vector grad_psi = regularizer.gradient(x);
  double lambda = initial_lambda(grad_psi, ev.grad_c);
  Vector f = stack_kkt(grad_psi, ev.grad_c, lambda, ev.c);
  double f_norm = norm2(f);
  double r = config.r0;

  result.trace.initial_kkt_norm = f_norm;
  result.trace.initial_discrepancy_gap = ev.residual_norm - problem.sigma();
  record_quality(config, x, result.trace.initial_quality);

  auto keep_going = [&](int k) {
    if (config.fixed_iterations > 0) return k < config.fixed_iterations;
    return f_norm >= config.tau && k < config.max_outer;
  };

  int k = 0;
  while (keep_going(k)) {
    SubproblemContext ctx = SubproblemContext::build(problem, regularizer, x, model);
    SubproblemOptions opts;
    opts.tol = rule == InnerTolRule::TauOverTen ? config.tau / 10.0
                                                : std::max(f_norm / config.zeta, config.tau / 10.0);
    opts.lambda_init = config.lambda_init_inner;
    opts.max_inner = config.max_inner;
    opts.cg_max_iter = config.cg_max_iter;
    opts.restore_feasibility = true;
    const SubproblemSolution sol = solve_subproblem(ctx, opts);
    const double lambda_sub = sol.lambda;
    r = std::max(2.0 * lambda_sub, r);

    const Vector jp = ctx.jacobian->apply(sol.p);
    const double model_decrease = 0.5 * config.eta * lambda_sub * dot(jp, jp);
    const double merit_c0 = std::max(0.0, ev.c);

    double beta = 1.0;
    bool accepted = false;
    PointEval trial;
    for (int t = 0; t < config.max_backtracks; ++t) {
      Vector step = sol.p;
      step *= beta;
      trial = evaluate(problem, x + step);
      const double merit_change = regularizer.value_difference(x, step) +
                                  r * (std::max(0.0, trial.c) - merit_c0);
      if (merit_change <= -beta * model_decrease) {
        accepted = true;
        break;
      }
      beta *= config.theta;
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "line search failed at outer iteration " << k + 1 << " after "
          << config.max_backtracks << " trial steps";
      throw NumericalError(msg.str());
    }

    Vector step = sol.p;
    step *= beta;
    x += step;
    const double lambda_new = lambda + beta * (lambda_sub - lambda);
    ev = std::move(trial);
    grad_psi = regularizer.gradient(x);
    f = stack_kkt(grad_psi, ev.grad_c, lambda_new, ev.c);
    f_norm = norm2(f);

    TraceRecord rec;
    rec.k = ++k;
    rec.kkt_norm = f_norm;
    rec.discrepancy_gap = ev.residual_norm - problem.sigma();
    rec.step_length = beta;
    rec.penalty = r;
    rec.inner_iterations = sol.inner_iterations;
    rec.rel_dx = relative_change(step, x);
    rec.rel_dlambda = lambda_new != 0.0 ? std::abs(lambda_new - lambda) / std::abs(lambda_new)
                                        : std::abs(lambda_new - lambda);
    rec.inner_residual = sol.residual_norm;
    rec.inner_converged = sol.converged;
    record_quality(config, x, rec.quality);
    result.trace.records.push_back(rec);
    lambda = lambda_new;
  }

  result.iterate = Iterate{x, lambda, f};
  result.converged = f_norm < config.tau;
  result.message = result.converged ? "converged" : "outer iteration limit reached";
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------

Vector kkt_residual(const InverseProblem& problem, const Regularizer& regularizer,
                    const Vector& x, double lambda) {
  const PointEval ev = evaluate(problem, x);
  return stack_kkt(regularizer.gradient(x), ev.grad_c, lambda, ev.c);
}

double kkt_residual_norm(const InverseProblem& problem, const Regularizer& regularizer,
                         const Vector& x, double lambda) {
  return norm2(kkt_residual(problem, regularizer, x, lambda));
}

void OuterConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("OuterConfig: " + what); };
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(zeta > 1.0)) fail("zeta must be > 1 (or infinite)");
  if (!(r0 > 0.0) || !std::isfinite(r0)) fail("r0 must be positive");
  if (!(eta > 0.0 && eta < 1.0)) fail("eta must lie in (0,1)");
  if (!(theta > 0.0 && theta < 1.0)) fail("theta must lie in (0,1)");
  if (max_outer < 1) fail("max_outer must be >= 1");
  if (!(lambda_init_inner > 0.0)) fail("lambda_init_inner must be positive");
  if (max_inner < 1) fail("max_inner must be >= 1");
  if (max_backtracks < 1) fail("max_backtracks must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be finite and >= 0");
  if (fixed_iterations < 0) fail("fixed_iterations must be >= 0");
  if (!(initial_point_cg_tol > 0.0)) fail("initial_point_cg_tol must be positive");
}

int SolveTrace::total_inner_iterations() const {
  int total = 0;
  for (const auto& r : records) total += r.inner_iterations;
  return total;
}

Vector initial_point(const InverseProblem& problem, double cg_rel_tol, int max_iter,
                     int cg_max_iter) {
  const std::size_t n = problem.num_unknowns();
  // Unregularised normal equations rarely reach 1e-10; n is the exact-arithmetic bound.
  const int cg_max = cg_max_iter > 0 ? cg_max_iter : static_cast<int>(n);
  Vector x(n);
  for (int it = 0; it <= max_iter; ++it) {
    const PointEval ev = evaluate(problem, x);
    if (ev.residual_norm <= problem.sigma()) return x;
    if (it == max_iter) break;
    const GnStep dir =
        gauss_newton_direction(*ev.jacobian, nullptr, 0.0, ev.grad_c, cg_rel_tol, cg_max);
    double beta = 1.0;
    bool accepted = false;
    for (int t = 0; t < 60; ++t, beta *= 0.5) {
      Vector trial = x;
      axpy(beta, dir.p, trial);
      const Vector r1 = problem.forward(trial) - problem.data();
      if (half_sq_norm_difference(r1, ev.residual) < 0.0) {
        x = std::move(trial);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw NumericalError(
          "initial_point: Gauss-Newton stalled above the noise level; the discrepancy ball "
          "||s(x) - b|| <= sigma appears infeasible");
    }
  }
  throw NumericalError("initial_point: discrepancy ball not reached in " +
                       std::to_string(max_iter) + " Gauss-Newton iterations");
}

double initial_lambda(const Vector& grad_psi, const Vector& grad_c) {
  const double gc2 = dot(grad_c, grad_c);
  if (!(gc2 > 0.0)) {
    throw NumericalError("initial_lambda: constraint gradient vanishes at x0");
  }
  return -dot(grad_psi, grad_c) / gc2;
}

double initial_lambda(const InverseProblem& problem, const Regularizer& regularizer,
                      const Vector& x0) {
  return initial_lambda(regularizer.gradient(x0), constraint_gradient(problem, x0));
}

double merit_value(const InverseProblem& problem, const Regularizer& regularizer,
                   const Vector& x, double r) {
  if (!(r >= 0.0)) throw ConfigError("merit_value: penalty must be >= 0");
  return regularizer.value(x) + r * std::max(0.0, constraint_value(problem, x));
}

SolveResult spn_exact(const InverseProblem& problem, const Regularizer& regularizer,
                      const OuterConfig& config) {
  return line_search_sqp(problem, regularizer, config, SubproblemModel::FullObjective,
                         InnerTolRule::TauOverTen);
}

SolveResult spn_q(const InverseProblem& problem, const Regularizer& regularizer,
                  const OuterConfig& config) {
  return line_search_sqp(problem, regularizer, config, SubproblemModel::QuadraticObjective,
                         InnerTolRule::Forcing);
}

SolveResult spn(const InverseProblem& problem, const Regularizer& regularizer,
                const OuterConfig& config) {
  config.validate();
  const std::size_t n = problem.num_unknowns();
  if (regularizer.dim() != n) throw DimensionError("regularizer dimension != number of unknowns");

  SolveResult result;
  Vector x = initial_point(problem, config.initial_point_cg_tol, config.initial_point_max_iter,
                           config.cg_max_iter);
  PointEval ev = evaluate(problem, x);
  Vector grad_psi = regularizer.gradient(x);
  double lambda = initial_lambda(grad_psi, ev.grad_c);
  Vector f = stack_kkt(grad_psi, ev.grad_c, lambda, ev.c);
  double f_norm = norm2(f);

  result.trace.initial_kkt_norm = f_norm;
  result.trace.initial_discrepancy_gap = ev.residual_norm - problem.sigma();
  record_quality(config, x, result.trace.initial_quality);

  int k = 0;
  while (config.fixed_iterations > 0 ? k < config.fixed_iterations
                                     : (f_norm >= config.tau && k < config.max_outer)) {
    const SubproblemContext ctx =
        SubproblemContext::build(problem, regularizer, x, SubproblemModel::FullObjective);
    SubproblemOptions opts;
    opts.tol = std::max(f_norm / config.zeta, config.tau / 10.0);
    opts.lambda_init = config.lambda_init_inner;
    opts.max_inner = config.max_inner;
    opts.cg_max_iter = config.cg_max_iter;
    const SubproblemSolution sol = solve_subproblem(ctx, opts);

    x += sol.p;
    const double lambda_new = sol.lambda;
    ev = evaluate(problem, x);
    grad_psi = regularizer.gradient(x);
    f = stack_kkt(grad_psi, ev.grad_c, lambda_new, ev.c);
    f_norm = norm2(f);

    TraceRecord rec;
    rec.k = ++k;
    rec.kkt_norm = f_norm;
    rec.discrepancy_gap = ev.residual_norm - problem.sigma();
    rec.step_length = 1.0;
    rec.inner_iterations = sol.inner_iterations;
    rec.rel_dx = relative_change(sol.p, x);
    rec.rel_dlambda = lambda_new != 0.0 ? std::abs(lambda_new - lambda) / std::abs(lambda_new)
                                        : std::abs(lambda_new - lambda);
    rec.inner_residual = sol.residual_norm;
    rec.inner_converged = sol.converged;
    record_quality(config, x, rec.quality);
    result.trace.records.push_back(rec);
    lambda = lambda_new;
  }

  result.iterate = Iterate{x, lambda, f};
  result.converged = f_norm < config.tau;
  result.message = result.converged ? "converged" : "outer iteration limit reached";
  return result;
}

GaussNewtonResult gauss_newton(const InverseProblem& problem, const Regularizer& regularizer,
                               const OuterConfig& config) {
  config.validate();
  const std::size_t n = problem.num_unknowns();
  if (regularizer.dim() != n) throw DimensionError("regularizer dimension != number of unknowns");
  const int cg_max = resolve_cg_max(config.cg_max_iter, n);
  const double cg_tol = std::max(1.0 / config.zeta, 1e-12);
  const double alpha = config.alpha;

  GaussNewtonResult result;
  Vector x(n);
  PointEval ev = evaluate(problem, x);
  Vector grad = ev.grad_c;
  axpy(alpha, regularizer.gradient(x), grad);
  double grad_norm = norm2(grad);
  result.trace.initial_kkt_norm = grad_norm;
  result.trace.initial_discrepancy_gap = ev.residual_norm - problem.sigma();
  record_quality(config, x, result.trace.initial_quality);

  int k = 0;
  while (grad_norm >= config.tau && k < config.max_outer) {
    const auto hess = regularizer.hessian_operator(x);
    const GnStep dir = gauss_newton_direction(*ev.jacobian, hess.get(), alpha, grad, cg_tol, cg_max);

    double beta = 1.0;
    bool accepted = false;
    PointEval trial;
    Vector step;
    for (int t = 0; t < config.max_backtracks; ++t, beta *= config.theta) {
      step = dir.p;
      step *= beta;
      trial = evaluate(problem, x + step);
      const double change = half_sq_norm_difference(trial.residual, ev.residual) +
                            alpha * regularizer.value_difference(x, step);
      if (change < 0.0) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "Gauss-Newton line search failed at iteration " << k + 1 << " after "
          << config.max_backtracks << " trial steps (gradient norm " << grad_norm << ")";
      throw NumericalError(msg.str());
    }
    x += step;
    ev = std::move(trial);
    grad = ev.grad_c;
    axpy(alpha, regularizer.gradient(x), grad);
    grad_norm = norm2(grad);

    TraceRecord rec;
    rec.k = ++k;
    rec.kkt_norm = grad_norm;
    rec.discrepancy_gap = ev.residual_norm - problem.sigma();
    rec.step_length = beta;
    rec.inner_iterations = dir.cg_iterations;
    rec.rel_dx = relative_change(step, x);
    record_quality(config, x, rec.quality);
    result.trace.records.push_back(rec);
  }
  result.x = std::move(x);
  result.converged = grad_norm < config.tau;
  result.message = result.converged ? "converged" : "outer iteration limit reached";
  return result;
}

}  // namespace spn
