#include "spn/talbot.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "spn/error.hpp"

namespace spn {

namespace {

// exp(700) ~ 1e304; anything beyond is treated as overflow.
constexpr double kExpLimit = 700.0;

void check_exponent(const Vector& arg, const char* component) {
  for (std::size_t i = 0; i < arg.size(); ++i) {
    if (!std::isfinite(arg[i]) || -arg[i] > kExpLimit) {
      std::ostringstream msg;
      msg << "Talbot forward model: exp overflow in the " << component
          << " term at measurement " << i << " (projection " << arg[i] << ")";
      throw NumericalError(msg.str());
    }
  }
}

/// Intersection of one ray with the pixel grid, appended as triplets.
void trace_ray(std::size_t npix, std::size_t row, double angle, double offset,
               std::vector<CsrMatrix::Triplet>& out) {
  const double half = 0.5 * static_cast<double>(npix);
  const double n = static_cast<double>(npix);
  double ux = std::cos(angle);
  double uy = std::sin(angle);
  double dx = -uy;
  double dy = ux;
  constexpr double kAxisSnap = 1e-12;
  if (std::abs(dx) < kAxisSnap) dx = 0.0;
  if (std::abs(dy) < kAxisSnap) dy = 0.0;
  if (dx == 0.0) dy = dy > 0 ? 1.0 : -1.0;
  if (dy == 0.0) dx = dx > 0 ? 1.0 : -1.0;
  // Normal used for the tie-break, consistent with the snapped direction.
  ux = dy;
  uy = -dx;
  const double px = offset * ux;
  const double py = offset * uy;

  // Continuous grid coordinates: fx = x + N/2 (columns), fy = N/2 - y (rows).
  const double fx0 = px + half;
  const double fy0 = half - py;
  const double gx = dx;
  const double gy = -dy;

  double s_lo = -std::numeric_limits<double>::infinity();
  double s_hi = std::numeric_limits<double>::infinity();
  auto clip = [&](double f0, double g) {
    if (g == 0.0) {
      if (f0 < 0.0 || f0 > n) s_lo = std::numeric_limits<double>::infinity();
      return;
    }
    double a = (0.0 - f0) / g;
    double b = (n - f0) / g;
    if (a > b) std::swap(a, b);
    s_lo = std::max(s_lo, a);
    s_hi = std::min(s_hi, b);
  };
  clip(fx0, gx);
  clip(fy0, gy);
  if (!(s_hi > s_lo)) return;

  std::vector<double> crossings{s_lo, s_hi};
  auto add_lines = [&](double f0, double g) {
    if (g == 0.0) return;
    for (std::size_t k = 0; k <= npix; ++k) {
      const double s = (static_cast<double>(k) - f0) / g;
      if (s > s_lo && s < s_hi) crossings.push_back(s);
    }
  };
  add_lines(fx0, gx);
  add_lines(fy0, gy);
  std::sort(crossings.begin(), crossings.end());

  // Pixel index along an axis for a midpoint coordinate f. When the ray runs
  // parallel to that axis' grid lines and sits exactly on one, pick the pixel
  // on the +normal side: +x for columns, +y (smaller fy) for rows.
  auto cell = [&](double f, bool parallel, bool plus_is_increasing) -> long {
    if (parallel && f == std::floor(f)) {
      return plus_is_increasing ? static_cast<long>(f) : static_cast<long>(f) - 1;
    }
    return static_cast<long>(std::floor(f));
  };
  const bool col_parallel = gx == 0.0;
  const bool row_parallel = gy == 0.0;
  // +normal in fx is +ux; in fy it is -uy.
  const bool col_plus_inc = ux > 0.0;
  const bool row_plus_inc = -uy > 0.0;

  for (std::size_t k = 0; k + 1 < crossings.size(); ++k) {
    const double len = crossings[k + 1] - crossings[k];
    if (len <= 0.0) continue;
    const double sm = 0.5 * (crossings[k] + crossings[k + 1]);
    const long c = cell(fx0 + sm * gx, col_parallel, col_plus_inc);
    const long r = cell(fy0 + sm * gy, row_parallel, row_plus_inc);
    if (c < 0 || r < 0 || c >= static_cast<long>(npix) || r >= static_cast<long>(npix)) continue;
    const std::size_t j = static_cast<std::size_t>(r) + npix * static_cast<std::size_t>(c);
    out.push_back({row, j, len});
  }
}

}  // namespace

TalbotGeometry TalbotGeometry::make(std::size_t npix, std::size_t nangles, std::size_t nstep,
                                    double s0, double v0) {
  if (npix < 1 || nangles < 1 || nstep < 1) {
    throw ConfigError("TalbotGeometry: npix, nangles and nstep must be positive");
  }
  if (!(s0 > 0.0)) throw ConfigError("TalbotGeometry: s0 must be positive");
  if (!(v0 > 0.0 && v0 < 1.0)) throw ConfigError("TalbotGeometry: v0 must lie in (0,1)");
  TalbotGeometry g;
  g.npix = npix;
  g.nangles = nangles;
  g.nstep = nstep;
  g.s0 = s0;
  g.v0 = v0;
  g.angles = Vector(nangles);
  for (std::size_t j = 0; j < nangles; ++j) {
    g.angles[j] = static_cast<double>(j) * std::numbers::pi / static_cast<double>(nangles);
  }
  g.phi0 = Vector(npix * nangles);
  for (std::size_t j = 0; j < nangles; ++j) {
    const double phase =
        static_cast<double>(j % nstep) * std::numbers::pi / static_cast<double>(nstep);
    for (std::size_t d = 0; d < npix; ++d) g.phi0[d + npix * j] = phase;
  }
  return g;
}

CsrMatrix build_projection_matrix(std::size_t npix, std::span<const double> angles) {
  if (npix < 1 || angles.empty()) {
    throw ConfigError("build_projection_matrix: need npix >= 1 and at least one angle");
  }
  std::vector<CsrMatrix::Triplet> t;
  t.reserve(angles.size() * npix * 2 * npix);
  const double centre = 0.5 * (static_cast<double>(npix) - 1.0);
  for (std::size_t j = 0; j < angles.size(); ++j) {
    for (std::size_t d = 0; d < npix; ++d) {
      trace_ray(npix, d + npix * j, angles[j], static_cast<double>(d) - centre, t);
    }
  }
  return CsrMatrix::from_triplets(npix * angles.size(), npix * npix, std::move(t));
}

CsrMatrix build_projection_matrix(std::size_t npix, std::size_t nangles) {
  const TalbotGeometry g = TalbotGeometry::make(npix, nangles);
  return build_projection_matrix(npix, g.angles.span());
}

// ---------------------------------------------------------------------------

TalbotModel::TalbotModel(TalbotGeometry geometry)
    : geometry_(std::move(geometry)),
      a_(build_projection_matrix(geometry_.npix, geometry_.angles.span())),
      at_(a_.transpose()),
      d_(phase_step_diff_matrix(geometry_.npix, geometry_.nangles)),
      a_phi_(csr_multiply(d_, a_)),
      a_phi_t_(a_phi_.transpose()) {
  if (geometry_.phi0.size() != geometry_.num_measurements()) {
    throw DimensionError("TalbotModel: phi0 length != npix * nangles");
  }
}

TalbotModel::Projections TalbotModel::project(const Vector& x) const {
  const std::size_t np = geometry_.num_pixels();
  if (x.size() != 3 * np) {
    throw DimensionError("TalbotModel: expected x of length " + std::to_string(3 * np) +
                         ", got " + std::to_string(x.size()));
  }
  return {csr_matvec(a_, x.segment(0, np)), csr_matvec(a_, x.segment(np, np)),
          csr_matvec(a_phi_, x.segment(2 * np, np))};
}

Vector TalbotModel::forward(const Vector& x) const {
  const auto [t, u, v] = project(x);
  check_exponent(t, "absorption (mu)");
  check_exponent(u, "dark-field (epsilon)");
  const double s0 = geometry_.s0;
  const double v0 = geometry_.v0;
  Vector s(t.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = s0 * std::exp(-t[i]) * (1.0 + v0 * std::exp(-u[i]) * std::cos(geometry_.phi0[i] + v[i]));
  }
  if (!all_finite(s)) throw NumericalError("Talbot forward model: non-finite output");
  return s;
}

// ---------------------------------------------------------------------------

TalbotJacobian::TalbotJacobian(std::shared_ptr<const TalbotModel> model, const Vector& x)
    : model_(std::move(model)) {
  const auto [t, u, v] = model_->project(x);
  check_exponent(t, "absorption (mu)");
  check_exponent(u, "dark-field (epsilon)");
  const auto& g = model_->geometry();
  const std::size_t m = t.size();
  d1_ = Vector(m);
  d2_ = Vector(m);
  d3_ = Vector(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double et = g.s0 * std::exp(-t[i]);
    const double fringe = g.v0 * std::exp(-u[i]);
    const double arg = g.phi0[i] + v[i];
    d1_[i] = et * (1.0 + fringe * std::cos(arg));
    d2_[i] = et * fringe * std::cos(arg);
    d3_[i] = et * fringe * std::sin(arg);
  }
}

Vector TalbotJacobian::apply(const Vector& p) const {
  const std::size_t np = model_->geometry().num_pixels();
  if (p.size() != 3 * np) throw DimensionError("TalbotJacobian::apply: wrong input length");
  const Vector am = model_->apply_a(p.segment(0, np));
  const Vector ae = model_->apply_a(p.segment(np, np));
  const Vector ad = model_->apply_a_phi(p.segment(2 * np, np));
  Vector out(am.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = -(d1_[i] * am[i]) - d2_[i] * ae[i] - d3_[i] * ad[i];
  }
  return out;
}

Vector TalbotJacobian::apply_transpose(const Vector& w) const {
  const std::size_t m = d1_.size();
  if (w.size() != m) throw DimensionError("TalbotJacobian::apply_transpose: wrong input length");
  const Vector w1 = -hadamard(d1_, w);
  const Vector w2 = -hadamard(d2_, w);
  const Vector w3 = -hadamard(d3_, w);
  const Vector g1 = model_->apply_a_transpose(w1);
  const Vector g2 = model_->apply_a_transpose(w2);
  const Vector g3 = model_->apply_a_phi_transpose(w3);
  return concat({&g1, &g2, &g3});
}

std::optional<Vector> TalbotJacobian::gram_diagonal() const {
  const Vector g1 = weighted_gram_diagonal(model_->projection(), hadamard(d1_, d1_));
  const Vector g2 = weighted_gram_diagonal(model_->projection(), hadamard(d2_, d2_));
  const Vector g3 = weighted_gram_diagonal(model_->phase_projection(), hadamard(d3_, d3_));
  return concat({&g1, &g2, &g3});
}

// ---------------------------------------------------------------------------

TalbotProblem::TalbotProblem(std::shared_ptr<const TalbotModel> model, Vector b, double sigma)
    : model_(std::move(model)), b_(std::move(b)), sigma_(sigma) {
  if (!model_) throw ConfigError("TalbotProblem: null model");
  if (b_.size() != model_->num_measurements()) {
    throw DimensionError("TalbotProblem: data length != number of measurements");
  }
  if (model_->num_measurements() < model_->num_unknowns()) {
    throw ConfigError("TalbotProblem: underdetermined geometry (m = " +
                      std::to_string(model_->num_measurements()) +
                      " < n = " + std::to_string(model_->num_unknowns()) + ")");
  }
  if (!(sigma_ >= 0.0) || !std::isfinite(sigma_)) {
    throw ConfigError("TalbotProblem: sigma must be finite and non-negative");
  }
}

std::shared_ptr<const LinearOperator> TalbotProblem::jacobian(const Vector& x) const {
  return std::make_shared<TalbotJacobian>(model_, x);
}

NoisyData make_noisy_data(const Vector& b_ex, double relative_noise, std::uint64_t seed) {
  if (!(relative_noise >= 0.0)) throw ConfigError("make_noisy_data: relative_noise must be >= 0");
  NoisyData out{b_ex, 0.0};
  if (relative_noise == 0.0) return out;
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector e(b_ex.size());
  for (double& v : e) v = normal(gen);
  const double scale = relative_noise * norm2(b_ex) / norm2(e);
  axpy(scale, e, out.b);
  out.sigma = relative_noise * norm2(b_ex);
  return out;
}

}  // namespace spn
