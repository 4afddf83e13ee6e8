#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>

#include "spn/linalg.hpp"
#include "spn/problem.hpp"

namespace spn {

/// Acquisition geometry of a 2-D parallel-beam Talbot-Lau scan.
///
/// Measurements are ordered angle-major: index i = detector + npix * angle.
/// Angles are j*pi/nangles (j < nangles) and the reference phase of every
/// detector row at angle j is (j mod nstep) * pi / nstep.
struct TalbotGeometry {
  std::size_t npix = 0;
  std::size_t nangles = 0;
  std::size_t nstep = 3;
  double s0 = 1.0;
  double v0 = 0.75;
  Vector angles;
  Vector phi0;

  static TalbotGeometry make(std::size_t npix, std::size_t nangles, std::size_t nstep = 3,
                             double s0 = 1.0, double v0 = 0.75);

  std::size_t num_pixels() const noexcept { return npix * npix; }
  std::size_t num_measurements() const noexcept { return npix * nangles; }
  std::size_t num_unknowns() const noexcept { return 3 * num_pixels(); }
};

/// Parallel-beam projection matrix with exact ray/pixel intersection lengths.
///
/// The N x N image of unit pixels is centred at the origin and vectorised
/// column by column (index = row + N * col, row 0 at the top). Detector d
/// sits at offset d - (N-1)/2 along (cos a, sin a) and its ray runs along
/// (-sin a, cos a). A ray lying exactly on a pixel edge is credited to the
/// pixel on the (cos a, sin a) side.
CsrMatrix build_projection_matrix(std::size_t npix, std::span<const double> angles);
CsrMatrix build_projection_matrix(std::size_t npix, std::size_t nangles);

/// The forward map s(x) = s0 exp(-A mu) [1 + v0 exp(-A eps) cos(phi0 + A_phi delta)]
/// on stacked unknowns x = [mu; eps; delta], with A_phi = D A.
class TalbotModel {
 public:
  explicit TalbotModel(TalbotGeometry geometry);

  const TalbotGeometry& geometry() const noexcept { return geometry_; }
  const CsrMatrix& projection() const noexcept { return a_; }
  const CsrMatrix& phase_projection() const noexcept { return a_phi_; }
  const CsrMatrix& phase_step_diff() const noexcept { return d_; }
  std::size_t num_unknowns() const noexcept { return geometry_.num_unknowns(); }
  std::size_t num_measurements() const noexcept { return geometry_.num_measurements(); }

  Vector forward(const Vector& x) const;

  /// Projected arguments t = A mu, u = A eps, v = A_phi delta.
  struct Projections {
    Vector t;
    Vector u;
    Vector v;
  };
  Projections project(const Vector& x) const;

  Vector apply_a(const Vector& v) const { return csr_matvec(a_, v); }
  Vector apply_a_transpose(const Vector& w) const { return csr_matvec(at_, w); }
  Vector apply_a_phi(const Vector& v) const { return csr_matvec(a_phi_, v); }
  Vector apply_a_phi_transpose(const Vector& w) const { return csr_matvec(a_phi_t_, w); }

 private:
  TalbotGeometry geometry_;
  CsrMatrix a_;
  CsrMatrix at_;
  CsrMatrix d_;
  CsrMatrix a_phi_;
  CsrMatrix a_phi_t_;
};

/// J(x) = (-D1 A, -D2 A, -D3 A_phi) with the diagonals evaluated once at x.
class TalbotJacobian final : public LinearOperator {
 public:
  TalbotJacobian(std::shared_ptr<const TalbotModel> model, const Vector& x);

  std::size_t rows() const override { return model_->num_measurements(); }
  std::size_t cols() const override { return model_->num_unknowns(); }
  Vector apply(const Vector& p) const override;
  Vector apply_transpose(const Vector& w) const override;
  std::optional<Vector> gram_diagonal() const override;

  const Vector& d1() const noexcept { return d1_; }
  const Vector& d2() const noexcept { return d2_; }
  const Vector& d3() const noexcept { return d3_; }

 private:
  std::shared_ptr<const TalbotModel> model_;
  Vector d1_;
  Vector d2_;
  Vector d3_;
};

/// A Talbot-Lau reconstruction problem: model plus noisy data and noise level.
class TalbotProblem final : public InverseProblem {
 public:
  /// Requires m >= n (npix * nangles >= 3 npix^2).
  TalbotProblem(std::shared_ptr<const TalbotModel> model, Vector b, double sigma);

  std::size_t num_unknowns() const override { return model_->num_unknowns(); }
  std::size_t num_measurements() const override { return model_->num_measurements(); }
  Vector forward(const Vector& x) const override { return model_->forward(x); }
  std::shared_ptr<const LinearOperator> jacobian(const Vector& x) const override;
  const Vector& data() const override { return b_; }
  double sigma() const override { return sigma_; }

  const TalbotModel& model() const noexcept { return *model_; }
  const std::shared_ptr<const TalbotModel>& model_ptr() const noexcept { return model_; }

 private:
  std::shared_ptr<const TalbotModel> model_;
  Vector b_;
  double sigma_;
};

struct NoisyData {
  Vector b;
  double sigma = 0.0;
};

/// b = b_ex + rel * ||b_ex|| * e / ||e|| with e standard normal drawn from a
/// generator seeded with `seed`; sigma = rel * ||b_ex||.
NoisyData make_noisy_data(const Vector& b_ex, double relative_noise, std::uint64_t seed);

}  // namespace spn
