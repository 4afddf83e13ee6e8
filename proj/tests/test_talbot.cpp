#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "spn/error.hpp"
#include "spn/problem.hpp"
#include "spn/talbot.hpp"

using namespace spn;

namespace {

Vector random_vector(std::size_t n, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (double& e : v) e = scale * nd(gen);
  return v;
}

std::shared_ptr<const TalbotModel> make_model(std::size_t npix, std::size_t nangles) {
  return std::make_shared<const TalbotModel>(TalbotGeometry::make(npix, nangles));
}

/// Pixel path lengths of one ray by dense sampling along the ray.
std::map<std::size_t, double> march_ray(std::size_t npix, double angle, double offset,
                                        int samples) {
  const double n = static_cast<double>(npix);
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double reach = 0.5 * n * std::sqrt(2.0) + 1e-3;
  const double ds = 2.0 * reach / samples;
  std::map<std::size_t, double> len;
  for (int k = 0; k < samples; ++k) {
    const double s = -reach + (k + 0.5) * ds;
    const double x = offset * ux - s * uy;
    const double y = offset * uy + s * ux;
    const double fx = x + 0.5 * n, fy = 0.5 * n - y;
    if (fx < 0.0 || fy < 0.0 || fx >= n || fy >= n) continue;
    const auto col = static_cast<std::size_t>(fx), row = static_cast<std::size_t>(fy);
    len[row + npix * col] += ds;
  }
  return len;
}

}  // namespace

TEST_SUITE("talbot") {
  TEST_CASE("geometry angles and reference phases") {
    const TalbotGeometry g = TalbotGeometry::make(3, 7, 3);
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(g.angles[j] == doctest::Approx(j * std::numbers::pi / 7.0));
      for (std::size_t d = 0; d < 3; ++d) {
        CHECK(g.phi0[d + 3 * j] == doctest::Approx((j % 3) * std::numbers::pi / 3.0));
      }
    }
    CHECK(g.num_unknowns() == 27);
    CHECK(g.num_measurements() == 21);
  }

  TEST_CASE("projection matrix of a single pixel") {
    const CsrMatrix a = build_projection_matrix(1, 1);
    CHECK(a.rows() == 1);
    CHECK(a.nnz() == 1);
    CHECK(a.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("axis-aligned rays cross one image row") {
    const std::size_t npix = 6;
    const CsrMatrix a = build_projection_matrix(npix, 4);
    const Vector sums = csr_matvec(a, Vector(npix * npix, 1.0));
    for (std::size_t d = 0; d < npix; ++d) CHECK(sums[d] == doctest::Approx(npix).epsilon(1e-14));
  }

  TEST_CASE("projection entries match a ray-marching oracle") {
    const std::size_t npix = 4;
    const std::vector<double> angles{0.3, 1.1, 2.0, 2.9};
    const CsrMatrix a = build_projection_matrix(npix, angles);
    for (std::size_t j = 0; j < angles.size(); ++j) {
      for (std::size_t d = 0; d < npix; ++d) {
        const double offset = static_cast<double>(d) - 0.5 * (npix - 1.0);
        const auto ref = march_ray(npix, angles[j], offset, 10000);
        const std::size_t row = d + npix * j;
        double chord = 0.0, chord_ref = 0.0;
        for (std::size_t p = 0; p < npix * npix; ++p) {
          const auto it = ref.find(p);
          const double expected = it == ref.end() ? 0.0 : it->second;
          CHECK(std::abs(a.at(row, p) - expected) <= 1e-3);
          chord += a.at(row, p);
          chord_ref += expected;
        }
        CHECK(std::abs(chord - chord_ref) <= 1e-3);
      }
    }
  }

  TEST_CASE("forward model at zero") {
    const auto model = make_model(3, 9);
    const Vector s = model->forward(Vector(model->num_unknowns()));
    const auto& g = model->geometry();
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(s[i] == doctest::Approx(g.s0 * (1.0 + g.v0 * std::cos(g.phi0[i]))).epsilon(1e-15));
      if (g.phi0[i] == 0.0) CHECK(s[i] == 1.75);
    }
  }

  TEST_CASE("forward model matches a per-component evaluation") {
    std::mt19937_64 gen(31);
    const auto model = make_model(4, 12);
    const std::size_t np = 16, m = model->num_measurements();
    const Vector x = random_vector(3 * np, gen, 0.1);
    const CsrMatrix& a = model->projection();
    const CsrMatrix& d = model->phase_step_diff();
    const auto& g = model->geometry();
    Vector t(m), u(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < np; ++j) {
        t[i] += a.at(i, j) * x[j];
        u[i] += a.at(i, j) * x[np + j];
      }
    }
    Vector ad(m);  // A delta
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < np; ++j) ad[i] += a.at(i, j) * x[2 * np + j];
    const Vector s = model->forward(x);
    for (std::size_t i = 0; i < m; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < m; ++k) v += d.at(i, k) * ad[k];
      const double ref =
          g.s0 * std::exp(-t[i]) * (1.0 + g.v0 * std::exp(-u[i]) * std::cos(g.phi0[i] + v));
      CHECK(std::abs(s[i] - ref) <= 1e-14 * std::max(1.0, std::abs(ref)));
    }
  }

  TEST_CASE("A_phi equals D A") {
    std::mt19937_64 gen(32);
    const auto model = make_model(5, 15);
    for (int t = 0; t < 5; ++t) {
      const Vector v = random_vector(25, gen);
      const Vector ref = csr_matvec(model->phase_step_diff(), model->apply_a(v));
      CHECK(norm2(model->apply_a_phi(v) - ref) <= 1e-13 * norm2(ref));
    }
  }

  TEST_CASE("Jacobian diagonals at zero") {
    const auto model = make_model(3, 9);
    const TalbotJacobian jac(model, Vector(model->num_unknowns()));
    for (std::size_t i = 0; i < model->num_measurements(); ++i) {
      if (model->geometry().phi0[i] != 0.0) continue;
      CHECK(jac.d1()[i] == doctest::Approx(1.75));
      CHECK(jac.d2()[i] == doctest::Approx(0.75));
      CHECK(jac.d3()[i] == 0.0);
    }
  }

  TEST_CASE("Jacobian directional derivative and adjoint") {
    std::mt19937_64 gen(33);
    const auto model = make_model(5, 20);
    const double h = 1e-6;
    for (int t = 0; t < 5; ++t) {
      const Vector x = random_vector(model->num_unknowns(), gen, 0.1);
      const Vector p = random_vector(model->num_unknowns(), gen);
      const TalbotJacobian jac(model, x);
      Vector xp = x, xm = x;
      axpy(h, p, xp);
      axpy(-h, p, xm);
      Vector fd = model->forward(xp) - model->forward(xm);
      fd *= 1.0 / (2.0 * h);
      const Vector jp = jac.apply(p);
      CHECK(norm2(fd - jp) <= 1e-5 * norm2(jp));

      const Vector w = random_vector(model->num_measurements(), gen);
      const double lhs = dot(jp, w), rhs = dot(p, jac.apply_transpose(w));
      CHECK(std::abs(lhs - rhs) <= 1e-12 * norm2(jp) * norm2(w));
      CHECK_THROWS_AS(jac.apply(Vector(3)), DimensionError);
    }
  }

  TEST_CASE("linearisation error is superlinear in the step") {
    std::mt19937_64 gen(34);
    const auto model = make_model(4, 16);
    const Vector x = random_vector(model->num_unknowns(), gen, 0.1);
    const Vector p = random_vector(model->num_unknowns(), gen, 0.1);
    const TalbotJacobian jac(model, x);
    const Vector s = model->forward(x), jp = jac.apply(p);
    double prev = std::numeric_limits<double>::infinity();
    for (double h : {1e-1, 1e-2, 1e-3}) {
      Vector xh = x;
      axpy(h, p, xh);
      Vector r = model->forward(xh) - s;
      axpy(-h, jp, r);
      const double ratio = norm2(r) / h;
      CHECK(ratio < 0.2 * prev);
      prev = ratio;
    }
  }

  TEST_CASE("forward values stay positive for nonnegative dark-field") {
    // A >= 0, so eps >= 0 gives v0 exp(-A eps) <= v0 < 1. Negative eps can
    // push v0 exp(-A eps) above 1 and the intensity below zero.
    std::mt19937_64 gen(35);
    const auto model = make_model(4, 12);
    const std::size_t np = 16;
    for (int t = 0; t < 10; ++t) {
      Vector x = random_vector(model->num_unknowns(), gen);
      for (std::size_t j = np; j < 2 * np; ++j) x[j] = std::abs(x[j]);
      const Vector s = model->forward(x);
      for (double v : s) CHECK(v > 0.0);
    }
  }

  TEST_CASE("constraint at a zero residual") {
    std::mt19937_64 gen(36);
    const auto model = make_model(3, 9);
    const Vector x = random_vector(model->num_unknowns(), gen, 0.1);
    const TalbotProblem p(model, model->forward(x), 0.3);
    CHECK(constraint_value(p, x) == doctest::Approx(-0.045));
    CHECK(norm2(constraint_gradient(p, x)) == 0.0);
    const TalbotProblem p0(model, model->forward(x), 0.0);
    CHECK(constraint_value(p0, x) == 0.0);
  }

  TEST_CASE("noisy data") {
    std::mt19937_64 gen(37);
    const Vector b_ex = random_vector(50, gen);
    const NoisyData none = make_noisy_data(b_ex, 0.0, 3);
    CHECK(none.b == b_ex);
    CHECK(none.sigma == 0.0);
    for (double rel : {1e-3, 1e-2, 0.1}) {
      const NoisyData nd = make_noisy_data(b_ex, rel, 5);
      CHECK(std::abs(norm2(nd.b - b_ex) / norm2(b_ex) - rel) <= 1e-14);
      CHECK(nd.sigma == doctest::Approx(rel * norm2(b_ex)));
      CHECK(make_noisy_data(b_ex, rel, 5).b == nd.b);
    }
  }

  TEST_CASE("underdetermined geometry is rejected") {
    const auto model = make_model(4, 8);  // m = 32 < n = 48
    CHECK_THROWS(TalbotProblem(model, Vector(model->num_measurements()), 0.1));
  }
}
