#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spn/linalg.hpp"
#include "spn/problem.hpp"
#include "spn/regularizer.hpp"
#include "spn/subproblem.hpp"

namespace spn {

/// Outer pair (x, lambda) together with F(x, lambda) = [grad Psi + lambda grad c; c].
struct Iterate {
  Vector x;
  double lambda = 0.0;
  Vector kkt_residual;

  double kkt_norm() const { return norm2(kkt_residual); }
};

Vector kkt_residual(const InverseProblem& problem, const Regularizer& regularizer,
                    const Vector& x, double lambda);
double kkt_residual_norm(const InverseProblem& problem, const Regularizer& regularizer,
                         const Vector& x, double lambda);

/// Per-component image quality of an iterate (e.g. SSIM of mu, eps, delta).
using QualityMonitor = std::function<std::array<double, 3>(const Vector& x)>;

struct OuterConfig {
  double tau = 1e-6;
  /// Forcing parameter; infinity means every sub-problem is solved to tau/10.
  double zeta = 10.0;
  double r0 = 1e3;
  double eta = 1e-4;
  double theta = 0.5;
  int max_outer = 500;
  double lambda_init_inner = 1e5;
  int max_inner = 500;
  int max_backtracks = 60;
  /// Gauss-Newton regularisation parameter.
  double alpha = 0.0;
  /// When positive, run exactly this many outer iterations and ignore tau
  /// as a stopping rule (used to expose stagnation levels).
  int fixed_iterations = 0;
  /// CG tolerance of the Gauss-Newton iterations that produce x0.
  double initial_point_cg_tol = 1e-10;
  int initial_point_max_iter = 200;
  /// 0 selects 5 * n.
  int cg_max_iter = 0;
  QualityMonitor quality;

  /// Throws ConfigError when a parameter is outside its admissible range.
  void validate() const;
};

struct TraceRecord {
  int k = 0;
  double kkt_norm = 0.0;
  double discrepancy_gap = 0.0;  // ||s(x_k) - b|| - sigma
  double step_length = 1.0;
  std::optional<double> penalty;
  int inner_iterations = 0;
  double rel_dx = 0.0;
  std::optional<double> rel_dlambda;
  std::optional<std::array<double, 3>> quality;
  double inner_residual = 0.0;
  bool inner_converged = true;
};

struct SolveTrace {
  double initial_kkt_norm = 0.0;
  double initial_discrepancy_gap = 0.0;
  std::optional<std::array<double, 3>> initial_quality;
  std::vector<TraceRecord> records;

  int total_inner_iterations() const;
};

struct SolveResult {
  Iterate iterate;
  SolveTrace trace;
  bool converged = false;
  std::string message;

  int outer_iterations() const { return static_cast<int>(trace.records.size()); }
};

/// Gauss-Newton on min 1/2 ||s(x) - b||^2 from x = 0, stopped as soon as
/// ||s(x) - b|| <= sigma. Throws NumericalError if the discrepancy ball is
/// not reached within `max_iter` iterations. `cg_max_iter` = 0 caps each CG
/// solve at n iterations.
Vector initial_point(const InverseProblem& problem, double cg_rel_tol = 1e-10,
                     int max_iter = 200, int cg_max_iter = 0);

/// Least-squares multiplier estimate -grad_psi^T grad_c / ||grad_c||^2.
double initial_lambda(const Vector& grad_psi, const Vector& grad_c);
double initial_lambda(const InverseProblem& problem, const Regularizer& regularizer,
                      const Vector& x0);

/// Exact penalty F_r(x) = Psi(x) + r max(0, c(x)).
double merit_value(const InverseProblem& problem, const Regularizer& regularizer,
                   const Vector& x, double r);

/// Line-search SQP with the full objective, sub-problems solved to tau/10.
SolveResult spn_exact(const InverseProblem& problem, const Regularizer& regularizer,
                      const OuterConfig& config);
/// Sequential Projected Newton: inexact sub-problems, full steps.
SolveResult spn(const InverseProblem& problem, const Regularizer& regularizer,
                const OuterConfig& config);
/// Line-search SQP with a quadratic model of Psi and inexact sub-problems.
SolveResult spn_q(const InverseProblem& problem, const Regularizer& regularizer,
                  const OuterConfig& config);

struct GaussNewtonResult {
  Vector x;
  SolveTrace trace;
  bool converged = false;
  std::string message;

  int outer_iterations() const { return static_cast<int>(trace.records.size()); }
};

/// Gauss-Newton for min 1/2 ||s(x) - b||^2 + alpha Psi(x) from x = 0, CG with
/// relative tolerance 1/zeta and backtracking on simple decrease.
GaussNewtonResult gauss_newton(const InverseProblem& problem, const Regularizer& regularizer,
                               const OuterConfig& config);

}  // namespace spn
