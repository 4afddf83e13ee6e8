#include <doctest.h>

#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "spn/error.hpp"
#include "spn/linalg.hpp"

using namespace spn;

namespace {

CsrMatrix random_sparse(std::size_t rows, std::size_t cols, double density, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd;
  std::vector<double> dense(rows * cols, 0.0);
  for (double& v : dense) {
    if (u(gen) < density) v = nd(gen);
  }
  return CsrMatrix::from_dense(rows, cols, dense);
}

Eigen::MatrixXd to_eigen(const CsrMatrix& a) {
  const auto d = a.to_dense();
  Eigen::MatrixXd m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = d[i * a.cols() + j];
  return m;
}

Vector random_vector(std::size_t n, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (double& e : v) e = nd(gen);
  return v;
}

double max_abs_diff(const Vector& a, const Eigen::VectorXd& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("linalg") {
  TEST_CASE("matvec on hand examples") {
    CHECK(csr_matvec(CsrMatrix::identity(3), Vector{1, 2, 3}) == Vector{1, 2, 3});
    const auto a = CsrMatrix::from_dense(2, 2, std::vector<double>{1, 2, 3, 4});
    CHECK(csr_matvec(a, Vector{1, 1}) == Vector{3, 7});
    CHECK(csr_matvec_transpose(CsrMatrix::identity(3), Vector{1, 2, 3}) == Vector{1, 2, 3});
    CHECK(csr_matvec_transpose(a, Vector{1, 1}) == Vector{4, 6});
  }

  TEST_CASE("matvec matches a dense product") {
    std::mt19937_64 gen(11);
    const auto a = random_sparse(20, 15, 0.1, gen);
    const Vector v = random_vector(15, gen);
    const Eigen::VectorXd ref = to_eigen(a) * Eigen::Map<const Eigen::VectorXd>(v.data(), 15);
    CHECK(max_abs_diff(csr_matvec(a, v), ref) <= 1e-14 * std::max(1.0, ref.norm()));
  }

  TEST_CASE("adjoint identity on random inputs") {
    std::mt19937_64 gen(12);
    for (int t = 0; t < 10; ++t) {
      const auto a = random_sparse(25, 17, 0.2, gen);
      const Vector v = random_vector(17, gen), w = random_vector(25, gen);
      const double lhs = dot(csr_matvec(a, v), w);
      const double rhs = dot(v, csr_matvec_transpose(a, w));
      CHECK(std::abs(lhs - rhs) <= 1e-12 * a.frobenius_norm() * norm2(v) * norm2(w));
    }
  }

  TEST_CASE("dimension mismatch throws") {
    const auto a = CsrMatrix::identity(3);
    CHECK_THROWS_AS(csr_matvec(a, Vector(2)), DimensionError);
    CHECK_THROWS_AS(csr_matvec_transpose(a, Vector(4)), DimensionError);
  }

  TEST_CASE("CSR invariants after construction") {
    std::vector<CsrMatrix::Triplet> t = {{1, 2, 1.0}, {0, 1, 2.0}, {1, 0, 3.0}, {1, 2, 4.0}};
    const auto a = CsrMatrix::from_triplets(2, 3, t);
    CHECK(a.row_ptr().front() == 0);
    CHECK(a.row_ptr().back() == a.nnz());
    CHECK(a.nnz() == 3);  // duplicates summed
    CHECK(a.at(1, 2) == 5.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t k = a.row_ptr()[i] + 1; k < a.row_ptr()[i + 1]; ++k) {
        CHECK(a.col_idx()[k - 1] < a.col_idx()[k]);
      }
    }
  }

  TEST_CASE("cg on identity and a 2x2 system") {
    const auto eye = CsrMatrix::identity(4);
    const CsrOperator op(eye);
    const Vector b{1, -2, 3, 0.5};
    const CgResult r = cg_solve(op, b, 1e-12, 10);
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    CHECK(norm2(r.x - b) <= 1e-15);

    const auto m = CsrMatrix::from_dense(2, 2, std::vector<double>{4, 1, 1, 3});
    const CsrOperator op2(m);
    const CgResult r2 = cg_solve(op2, Vector{1, 2}, 1e-14, 10);
    CHECK(r2.x[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-13));
    CHECK(r2.x[1] == doctest::Approx(7.0 / 11.0).epsilon(1e-13));
  }

  TEST_CASE("cg zero rhs returns zero immediately") {
    const auto eye = CsrMatrix::identity(3);
    const CgResult r = cg_solve(CsrOperator(eye), Vector(3), 1e-10, 10);
    CHECK(r.iterations == 0);
    CHECK(norm2(r.x) == 0.0);
  }

  TEST_CASE("cg matches a dense factorisation on a random SPD system") {
    std::mt19937_64 gen(13);
    const auto b = random_sparse(40, 30, 0.3, gen);
    const CsrMatrix spd = csr_add(weighted_gram(b, Vector(40, 1.0)), CsrMatrix::identity(30));
    const Vector rhs = random_vector(30, gen);
    const CgResult r = cg_solve(CsrOperator(spd), rhs, 1e-10, 300);
    CHECK(r.converged);
    const Eigen::VectorXd ref =
        to_eigen(spd).ldlt().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), 30));
    CHECK(max_abs_diff(r.x, ref) <= 1e-8);
  }

  TEST_CASE("cg energy functional decreases monotonically") {
    std::mt19937_64 gen(14);
    const auto b = random_sparse(30, 20, 0.3, gen);
    const CsrMatrix spd = csr_add(weighted_gram(b, Vector(30, 1.0)), CsrMatrix::identity(20));
    const Vector rhs = random_vector(20, gen);
    const CsrOperator op(spd);
    double prev = 0.0;  // energy at x = 0
    for (int k = 1; k <= 15; ++k) {
      const Vector x = cg_solve(op, rhs, 1e-30, k).x;
      const double energy = 0.5 * dot(x, csr_matvec(spd, x)) - dot(rhs, x);
      CHECK(energy <= prev + 1e-12);
      prev = energy;
    }
  }

  TEST_CASE("pcg agrees with cg") {
    std::mt19937_64 gen(15);
    const auto b = random_sparse(40, 25, 0.3, gen);
    const CsrMatrix spd = csr_add(weighted_gram(b, Vector(40, 1.0)), CsrMatrix::identity(25));
    const Vector rhs = random_vector(25, gen);
    Vector inv = weighted_gram_diagonal(b, Vector(40, 1.0));
    for (double& v : inv) v = 1.0 / (v + 1.0);
    const CgResult p = pcg_solve(CsrOperator(spd), rhs, inv, 1e-12, 200);
    const CgResult c = cg_solve(CsrOperator(spd), rhs, 1e-12, 200);
    CHECK(p.converged);
    CHECK(norm2(p.x - c.x) <= 1e-9 * norm2(c.x));
  }

  TEST_CASE("kron examples") {
    CHECK(kron(CsrMatrix::identity(2), CsrMatrix::identity(3)) == CsrMatrix::identity(6));
    const auto d = CsrMatrix::from_dense(1, 2, std::vector<double>{1, -1});
    const auto k = kron(d, CsrMatrix::identity(2));
    CHECK(k.to_dense() == std::vector<double>{1, 0, -1, 0, 0, 1, 0, -1});
    std::mt19937_64 gen(16);
    const auto a = random_sparse(3, 4, 0.5, gen), b = random_sparse(2, 5, 0.5, gen);
    const auto ab = kron(a, b);
    CHECK(ab.rows() == 6);
    CHECK(ab.cols() == 20);
    CHECK(ab.nnz() == a.nnz() * b.nnz());
  }

  TEST_CASE("one-dimensional difference matrix") {
    CHECK(diff_matrix_1d(2).to_dense() == std::vector<double>{1, -1});
    CHECK(diff_matrix_1d(3).to_dense() == std::vector<double>{1, -1, 0, 0, 1, -1});
    CHECK(norm2(csr_matvec(diff_matrix_1d(7), Vector(7, 2.5))) == 0.0);
    CHECK_THROWS_AS(diff_matrix_1d(1), DimensionError);
  }

  TEST_CASE("phase-step difference matrix") {
    CHECK(phase_step_diff_matrix(2, 1).to_dense() == std::vector<double>{-1, 1, 0, -1});
    const auto d = phase_step_diff_matrix(2, 2);
    CHECK(d.to_dense() ==
          std::vector<double>{-1, 1, 0, 0, 0, -1, 0, 0, 0, 0, -1, 1, 0, 0, 0, -1});
    const auto big = phase_step_diff_matrix(5, 3);
    const Vector sums = csr_matvec(big, Vector(15, 1.0));
    for (std::size_t i = 0; i < 15; ++i) CHECK(sums[i] == (i % 5 == 4 ? -1.0 : 0.0));
  }

  TEST_CASE("binary CSR round trip") {
    std::mt19937_64 gen(17);
    const auto a = random_sparse(9, 7, 0.3, gen);
    std::stringstream ss;
    write_csr(ss, a);
    CHECK(ss.str().substr(0, 4) == "CSR1");
    CHECK(read_csr(ss) == a);
  }

  TEST_CASE("deterministic results for identical inputs") {
    std::mt19937_64 g1(99), g2(99);
    const auto a1 = random_sparse(30, 30, 0.2, g1), a2 = random_sparse(30, 30, 0.2, g2);
    const Vector v1 = random_vector(30, g1), v2 = random_vector(30, g2);
    CHECK(csr_matvec(a1, v1) == csr_matvec(a2, v2));
    CHECK(csr_matvec_transpose(a1, v1) == csr_matvec_transpose(a2, v2));
  }
}
