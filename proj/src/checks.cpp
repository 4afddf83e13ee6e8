#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

#include <Eigen/Dense>

#include "spn/error.hpp"
#include "spn/harness.hpp"
#include "spn/problem.hpp"
#include "spn/regularizer.hpp"
#include "spn/subproblem.hpp"
#include "spn/talbot.hpp"

namespace spn {

namespace {

constexpr std::size_t kNpix = 8;
constexpr std::size_t kNangles = 4 * kNpix;
constexpr int kTrials = 20;

Vector random_vector(std::size_t n, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (double& e : v) e = scale * normal(gen);
  return v;
}

std::shared_ptr<const TalbotModel> small_model() {
  return std::make_shared<const TalbotModel>(TalbotGeometry::make(kNpix, kNangles));
}

/// |<Op v, w> - <v, Op^T w>| / max(||Op v|| ||w||, ||v|| ||Op^T w||)
template <class Apply, class ApplyT>
double adjoint_error(Apply apply, ApplyT apply_t, std::size_t cols, std::size_t rows,
                     std::mt19937_64& gen) {
  const Vector v = random_vector(cols, gen);
  const Vector w = random_vector(rows, gen);
  const Vector av = apply(v);
  const Vector atw = apply_t(w);
  const double scale = std::max(norm2(av) * norm2(w), norm2(v) * norm2(atw));
  return std::abs(dot(av, w) - dot(v, atw)) / scale;
}

std::vector<CheckOutcome> adjoint_suite(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto model = small_model();
  const std::size_t np = kNpix * kNpix;
  const std::size_t m = model->num_measurements();
  double e_a = 0.0, e_phi = 0.0, e_j = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    e_a = std::max(e_a, adjoint_error([&](const Vector& v) { return model->apply_a(v); },
                                      [&](const Vector& w) { return model->apply_a_transpose(w); },
                                      np, m, gen));
    e_phi = std::max(
        e_phi, adjoint_error([&](const Vector& v) { return model->apply_a_phi(v); },
                             [&](const Vector& w) { return model->apply_a_phi_transpose(w); }, np,
                             m, gen));
    const TalbotJacobian jac(model, random_vector(model->num_unknowns(), gen, 0.1));
    e_j = std::max(e_j, adjoint_error([&](const Vector& v) { return jac.apply(v); },
                                      [&](const Vector& w) { return jac.apply_transpose(w); },
                                      jac.cols(), jac.rows(), gen));
  }
  return {{"adjoint A", e_a, 1e-12}, {"adjoint A_phi", e_phi, 1e-12}, {"adjoint J(x)", e_j, 1e-12}};
}

std::vector<CheckOutcome> jacobian_suite(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto model = small_model();
  const double h = 1e-6;
  double worst = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const Vector x = random_vector(model->num_unknowns(), gen, 0.1);
    const Vector p = random_vector(model->num_unknowns(), gen);
    const TalbotJacobian jac(model, x);
    const Vector jp = jac.apply(p);
    Vector xp = x, xm = x;
    axpy(h, p, xp);
    axpy(-h, p, xm);
    Vector fd = model->forward(xp) - model->forward(xm);
    fd *= 1.0 / (2.0 * h);
    worst = std::max(worst, norm2(fd - jp) / norm2(jp));
  }
  return {{"forward-model Jacobian (central differences)", worst, 1e-5}};
}

/// Componentwise central-difference gradient of f.
template <class F>
Vector fd_gradient(F f, const Vector& x, double h) {
  Vector g(x.size());
  Vector y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] + h;
    const double fp = f(y);
    y[i] = x[i] - h;
    const double fm = f(y);
    y[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

std::vector<CheckOutcome> gradient_suite(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto model = small_model();
  const std::size_t n = model->num_unknowns();
  const double h = 1e-6;

  const Vector x_ex = random_vector(n, gen, 0.1);
  const NoisyData noisy = make_noisy_data(model->forward(x_ex), 0.01, seed + 1);
  const TalbotProblem problem(model, noisy.b, noisy.sigma);
  const Vector x = x_ex + random_vector(n, gen, 0.02);
  const Vector gc = constraint_gradient(problem, x);
  const Vector gc_fd =
      fd_gradient([&](const Vector& y) { return constraint_value(problem, y); }, x, h);
  const double e_c = norm2(gc_fd - gc) / norm2(gc);

  const double xi = 1e-3;
  const SmoothedL1 l1(CsrMatrix::identity(n), xi);
  const SmoothedL1 tv(build_tv_operator(kNpix, 3), xi);
  double e_grad = 0.0, e_hess = 0.0;
  for (const SmoothedL1* reg : {&l1, &tv}) {
    const Vector g = reg->gradient(x);
    const Vector g_fd = fd_gradient([&](const Vector& y) { return reg->value(y); }, x, h);
    e_grad = std::max(e_grad, norm2(g_fd - g) / norm2(g));
    for (int t = 0; t < 5; ++t) {
      const Vector v = random_vector(n, gen);
      const Vector hv = reg->hessian_apply(x, v);
      Vector xp = x, xm = x;
      axpy(h, v, xp);
      axpy(-h, v, xm);
      Vector fd = reg->gradient(xp) - reg->gradient(xm);
      fd *= 1.0 / (2.0 * h);
      e_hess = std::max(e_hess, norm2(fd - hv) / norm2(hv));
    }
  }
  return {{"constraint gradient (central differences)", e_c, 1e-5},
          {"regularizer gradient (central differences)", e_grad, 1e-5},
          {"regularizer Hessian-vector (central differences)", e_hess, 1e-4}};
}

std::vector<CheckOutcome> subproblem_oracle_suite() {
  // s(x) = J x with J = diag(1, 2), x_k = 0 and s_k - b = (0.5, 0.3), sigma = 0.4;
  // Psi = smoothed l1 with L = I, xi = 1e-6.
  const CsrMatrix jm = CsrMatrix::from_dense(2, 2, std::vector<double>{1.0, 0.0, 0.0, 2.0});
  const Vector b{-0.5, -0.3};
  const double sigma = 0.4;
  const LinearProblem problem(jm, b, sigma);
  const SmoothedL1 reg(CsrMatrix::identity(2), 1e-6);
  const Vector x{0.0, 0.0};
  const SubproblemContext ctx =
      SubproblemContext::build(problem, reg, x, SubproblemModel::FullObjective);

  SubproblemOptions opts;
  opts.tol = 1e-12;
  const SubproblemSolution sol = solve_subproblem(ctx, opts);

  // Oracle: with J = QR, ||J p + r0||^2 = ||R p + Q^T r0||^2 + ||r_perp||^2, so
  // the constraint set is p(t) = R^{-1} (rho u(t) - Q^T r0), u(t) = (cos t, sin t).
  Eigen::MatrixXd je(2, 2);
  je << 1.0, 0.0, 0.0, 2.0;
  const Eigen::Vector2d r0(0.5, 0.3);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(je);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd r = q.transpose() * je;
  const Eigen::VectorXd qtr = q.transpose() * r0;
  const double perp2 = (r0 - q * qtr).squaredNorm();
  if (!(sigma * sigma > perp2)) throw NumericalError("oracle instance is infeasible");
  const double rho = std::sqrt(sigma * sigma - perp2);

  auto point = [&](double t) {
    const Eigen::VectorXd p = r.triangularView<Eigen::Upper>().solve(
        Eigen::Vector2d(rho * std::cos(t), rho * std::sin(t)) - qtr);
    return p;
  };
  auto objective = [&](double t) {
    const Eigen::VectorXd p = point(t);
    return reg.value(Vector{x[0] + p[0], x[1] + p[1]});
  };
  constexpr int kGrid = 1000000;
  const double step = 2.0 * M_PI / kGrid;
  int best = 0;
  double best_val = objective(0.0);
  for (int i = 1; i < kGrid; ++i) {
    const double v = objective(i * step);
    if (v < best_val) {
      best_val = v;
      best = i;
    }
  }
  // Golden-section refinement on the bracketing grid cells.
  double lo = (best - 1) * step, hi = (best + 1) * step;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double t1 = hi - g * (hi - lo), t2 = lo + g * (hi - lo);
    if (objective(t1) < objective(t2)) hi = t2;
    else lo = t1;
  }
  const Eigen::VectorXd p_oracle = point(0.5 * (lo + hi));
  const double p_err = std::hypot(sol.p[0] - p_oracle[0], sol.p[1] - p_oracle[1]);
  const double f_norm = norm2(subproblem_residual(ctx, sol.p, sol.lambda));
  return {{"sub-problem p vs ellipse grid oracle", p_err, 1e-4},
          {"sub-problem residual ||F^(k)||", f_norm, 1e-10}};
}

}  // namespace

std::vector<std::string> check_suite_names() { return {"adjoint", "jacobian", "gradient", "oracle"}; }

std::vector<CheckOutcome> run_check_suite(const std::string& suite, std::uint64_t seed) {
  if (suite == "adjoint") return adjoint_suite(seed);
  if (suite == "jacobian") return jacobian_suite(seed);
  if (suite == "gradient") return gradient_suite(seed);
  if (suite == "oracle") return subproblem_oracle_suite();
  throw ConfigError("unknown check suite '" + suite + "' (adjoint | jacobian | gradient | oracle)");
}

void print_check_outcomes(std::ostream& os, const std::vector<CheckOutcome>& outcomes) {
  for (const CheckOutcome& c : outcomes) {
    os << (c.passed() ? "PASS " : "FAIL ") << c.name << ": error " << std::scientific
       << std::setprecision(3) << c.error << " (threshold " << c.threshold << ")\n";
  }
  os << std::defaultfloat;
}

}  // namespace spn
