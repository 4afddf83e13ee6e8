#include <doctest.h>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spn/error.hpp"
#include "spn/harness.hpp"
#include "spn/regularizer.hpp"

using namespace spn;
namespace fs = std::filesystem;

namespace {

Vector random_vector(std::size_t n, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (double& e : v) e = scale * nd(gen);
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("spn_harness_test_" + name);
  fs::remove_all(dir);
  return dir;
}

/// SSIM evaluated window by window with centred moments, no separable filtering.
double naive_ssim(const Vector& x, const Vector& y, std::size_t npix) {
  const long n = static_cast<long>(npix);
  auto mirror = [n](long i) { return i < 0 ? -i - 1 : (i >= n ? 2 * n - i - 1 : i); };
  double wsum = 0.0;
  double w[11][11];
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) {
      w[i + 5][j + 5] = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
      wsum += w[i + 5][j + 5];
    }
  double lo = x[0], hi = x[0];
  for (double v : x) lo = std::min(lo, v), hi = std::max(hi, v);
  const double c1 = std::pow(0.01 * (hi - lo), 2), c2 = std::pow(0.03 * (hi - lo), 2);
  double total = 0.0;
  for (long c = 0; c < n; ++c) {
    for (long r = 0; r < n; ++r) {
      auto at = [&](const Vector& img, int i, int j) {
        return img[static_cast<std::size_t>(mirror(r + i) + n * mirror(c + j))];
      };
      double mx = 0.0, my = 0.0;
      for (int i = -5; i <= 5; ++i)
        for (int j = -5; j <= 5; ++j) {
          mx += w[i + 5][j + 5] / wsum * at(x, i, j);
          my += w[i + 5][j + 5] / wsum * at(y, i, j);
        }
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (int i = -5; i <= 5; ++i)
        for (int j = -5; j <= 5; ++j) {
          const double dx = at(x, i, j) - mx, dy = at(y, i, j) - my, ww = w[i + 5][j + 5] / wsum;
          sxx += ww * dx * dx;
          syy += ww * dy * dy;
          sxy += ww * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    }
  }
  return total / static_cast<double>(n * n);
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.id = "tiny";
  c.npix = 4;
  c.taus = {1e-6};
  c.zetas = {10.0};
  c.algorithms = {Algorithm::Spn, Algorithm::SpnQ, Algorithm::GaussNewton};
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("random phantom is deterministic and has variance 0.01") {
    const Phantom a = generate_phantom(PhantomKind::RandomGaussian, 64, 3);
    const Phantom b = generate_phantom(PhantomKind::RandomGaussian, 64, 3);
    CHECK(a.stacked() == b.stacked());
    CHECK(generate_phantom(PhantomKind::RandomGaussian, 64, 4).stacked() != a.stacked());
    const Vector x = a.stacked();
    REQUIRE(x.size() >= 10000);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size() - 1);
    CHECK(var == doctest::Approx(0.01).epsilon(0.2));
  }

  TEST_CASE("structured phantom is bounded and piecewise constant") {
    // Below npix = 16 the shape boundaries alone exceed 20% of the differences.
    for (std::size_t npix : {16, 32, 64}) {
      const Phantom p = generate_phantom(PhantomKind::Structured, npix, 0);
      const Vector x = p.stacked();
      for (double v : x) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      const Vector g = csr_matvec(build_tv_operator(npix, 3), x);
      std::size_t zeros = 0;
      for (double v : g) zeros += v == 0.0;
      CHECK(static_cast<double>(zeros) > 0.8 * static_cast<double>(g.size()));
    }
  }

  TEST_CASE("phantom kind names") {
    CHECK(parse_phantom_kind(to_string(PhantomKind::Structured)) == PhantomKind::Structured);
    CHECK(parse_phantom_kind("random_gaussian") == PhantomKind::RandomGaussian);
    CHECK_THROWS_AS(parse_phantom_kind("ellipse"), ConfigError);
  }

  TEST_CASE("SSIM self-similarity and sign flip") {
    std::mt19937_64 gen(81);
    const Vector x = random_vector(144, gen);
    CHECK(ssim(x, x, 12).value == 1.0);
    CHECK(ssim(x, -x, 12).value < 1.0);
    CHECK_FALSE(ssim(x, x, 12).constant_reference);
  }

  TEST_CASE("SSIM matches a per-window evaluation") {
    std::mt19937_64 gen(82);
    for (std::size_t npix : {8, 12, 20}) {
      const Vector x = random_vector(npix * npix, gen);
      const Vector y = x + random_vector(npix * npix, gen, 0.3);
      CHECK(std::abs(ssim(x, y, npix).value - naive_ssim(x, y, npix)) <= 1e-10);
    }
    const Phantom p = generate_phantom(PhantomKind::Structured, 16, 0);
    const Vector y = p.mu + random_vector(256, gen, 0.05);
    CHECK(std::abs(ssim(p.mu, y, 16).value - naive_ssim(p.mu, y, 16)) <= 1e-10);
  }

  TEST_CASE("SSIM flags a constant reference") {
    std::mt19937_64 gen(83);
    const SsimResult r = ssim(Vector(64, 0.5), random_vector(64, gen), 8);
    CHECK(r.constant_reference);
    CHECK(std::isfinite(r.value));
    CHECK_THROWS_AS(ssim(Vector(64), Vector(63), 8), DimensionError);
  }

  TEST_CASE("config validation") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    c.nangles_factor = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ExperimentConfig{};
    c.npix = 128;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.allow_large = true;
    CHECK_NOTHROW(c.validate());
    c = ExperimentConfig{};
    c.relative_noise = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ExperimentConfig{};
    c.algorithms = {Algorithm::GaussNewton};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    for (int e = 1; e <= 6; ++e) CHECK_NOTHROW(ExperimentConfig::preset(e).validate());
    CHECK_THROWS_AS(ExperimentConfig::preset(7), ConfigError);
  }

  TEST_CASE("invalid config is rejected before any solve") {
    ExperimentConfig c = tiny_config(scratch_dir("invalid"));
    c.nangles_factor = 2;
    CHECK_THROWS_AS(run_experiment(c), ConfigError);
    CHECK_FALSE(fs::exists(c.output_dir));
  }

  TEST_CASE("config JSON round trip and unknown keys") {
    ExperimentConfig c = ExperimentConfig::preset(3);
    c.taus = {1e-4, 1e-8};
    const ExperimentConfig back = ExperimentConfig::from_json_text(c.to_json_text());
    CHECK(back.to_json_text() == c.to_json_text());
    CHECK(back.zetas.back() == std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"npix": 8, "colour": 1})"), ConfigError);
    const auto p = ExperimentConfig::from_json_text(R"({"preset": 5, "npix": 16})");
    CHECK(p.npix == 16);
    CHECK(p.regularizer == RegularizerKind::SmoothedTv);
    CHECK(ExperimentConfig::from_json_text(R"({"zeta": "inf"})").zetas ==
          std::vector<double>{std::numeric_limits<double>::infinity()});
  }

  TEST_CASE("shortest round-trip formatting") {
    std::mt19937_64 gen(84);
    for (double v : {0.1, 1e-300, -2.5, 123456789.125, 1.0 / 3.0}) {
      const std::string s = format_double(v);
      double back = 0.0;
      std::from_chars(s.data(), s.data() + s.size(), back);
      CHECK(back == v);
    }
    CHECK(format_double(0.5) == "0.5");
    for (int i = 0; i < 100; ++i) {
      const double v = random_vector(1, gen)[0] * 1e5;
      const std::string s = format_double(v);
      CHECK(std::stod(s) == v);
      CHECK(s.find(',') == std::string::npos);
    }
  }

  TEST_CASE("kkt residual norm matches a componentwise recomputation") {
    std::mt19937_64 gen(85);
    const std::size_t m = 12, n = 5;
    std::vector<double> dense(m * n);
    for (double& v : dense) v = random_vector(1, gen)[0];
    const LinearProblem p(CsrMatrix::from_dense(m, n, dense), random_vector(m, gen), 0.3);
    const SmoothedL1 reg(CsrMatrix::identity(n), 1e-2);
    const Vector x = random_vector(n, gen);
    const double lambda = 1.7;
    double sq = 0.0;
    Vector r = p.forward(x) - p.data();
    for (std::size_t j = 0; j < n; ++j) {
      double gc = 0.0;
      for (std::size_t i = 0; i < m; ++i) gc += dense[i * n + j] * r[i];
      const double gpsi = x[j] / std::sqrt(x[j] * x[j] + 1e-2);
      sq += std::pow(gpsi + lambda * gc, 2);
    }
    const double c = 0.5 * dot(r, r) - 0.5 * 0.09;
    sq += c * c;
    CHECK(kkt_residual_norm(p, reg, x, lambda) == doctest::Approx(std::sqrt(sq)).epsilon(1e-14));
  }

  TEST_CASE("experiment files, row counts and byte-identical reruns") {
    const fs::path d1 = scratch_dir("run1"), d2 = scratch_dir("run2");
    const ExperimentResult r1 = run_experiment(tiny_config(d1));
    const ExperimentResult r2 = run_experiment(tiny_config(d2));
    REQUIRE(r1.runs.size() == 3);
    CHECK(r1.all_converged());
    CHECK(fs::exists(d1 / "summary.json"));
    CHECK(fs::exists(d1 / "config.json"));
    CHECK(fs::exists(d1 / "exact_mu.f64"));
    for (const RunSummary& run : r1.runs) {
      INFO(run.label);
      const std::string csv = slurp(d1 / (run.label + ".csv"));
      const auto rows = std::count(csv.begin(), csv.end(), '\n');
      CHECK(rows == run.outer_iterations + 1);
      CHECK(csv.rfind("k,kkt_norm,discrepancy_gap,beta,penalty,inner_its,rel_dx,rel_dlambda,", 0) == 0);
      CHECK(csv == slurp(d2 / (run.label + ".csv")));
      CHECK(fs::file_size(d1 / (run.label + "_mu.f64")) == 16 * sizeof(double));
      CHECK(slurp(d1 / (run.label + "_delta.f64")) == slurp(d2 / (run.label + "_delta.f64")));
    }
    const auto summary = nlohmann::json::parse(slurp(d1 / "summary.json"));
    CHECK(summary["runs"].size() == 3);
    CHECK(summary["runs"][0].contains("wall_time"));
    fs::remove_all(d1);
    fs::remove_all(d2);
  }

  TEST_CASE("final SPN iterate sits on the discrepancy surface") {
    ExperimentConfig c = tiny_config("unused");
    c.algorithms = {Algorithm::Spn};
    c.taus = {1e-8};
    const ExperimentResult r = run_experiment(c, false);
    REQUIRE(r.runs.front().converged);
    CHECK(std::abs(r.runs.front().final_discrepancy_gap) <= std::max(1e-8, 1e-6 * r.sigma));
  }

  TEST_CASE("solver errors are recorded and later runs continue") {
    ExperimentConfig c = tiny_config("unused");
    c.max_outer = 1;
    c.taus = {1e-12};
    const ExperimentResult r = run_experiment(c, false);
    CHECK(r.runs.size() == 3);
    CHECK_FALSE(r.all_converged());
  }

  TEST_CASE("TV reconstruction improves SSIM on a structured phantom") {
    ExperimentConfig c;
    c.npix = 12;
    c.phantom = PhantomKind::Structured;
    c.regularizer = RegularizerKind::SmoothedTv;
    c.xi = 1e-6;
    c.algorithms = {Algorithm::Spn};
    c.track_ssim = true;
    const ExperimentResult r = run_experiment(c, false);
    const RunSummary& run = r.runs.front();
    REQUIRE(run.converged);
    REQUIRE(run.trace.initial_quality.has_value());
    REQUIRE(run.final_ssim.has_value());
    for (std::size_t k = 0; k < 3; ++k) CHECK((*run.final_ssim)[k] >= (*run.trace.initial_quality)[k]);
    for (const TraceRecord& rec : run.trace.records) CHECK(rec.quality.has_value());
  }

  TEST_CASE("output root override") {
    ExperimentConfig c;
    c.output_dir = "results/exp9";
    ::setenv("SPN_OUTPUT_ROOT", "/tmp/spn_root", 1);
    CHECK(resolve_output_dir(c) == fs::path("/tmp/spn_root/results/exp9"));
    c.output_dir = "/abs/dir";
    CHECK(resolve_output_dir(c) == fs::path("/abs/dir"));
    ::unsetenv("SPN_OUTPUT_ROOT");
    c.output_dir = "results/exp9";
    CHECK(resolve_output_dir(c) == fs::path("results/exp9"));
  }

  TEST_CASE("verification suites pass") {
    for (const std::string& s : check_suite_names()) {
      for (const CheckOutcome& o : run_check_suite(s)) {
        INFO(o.name);
        CHECK(o.passed());
      }
    }
    CHECK_THROWS_AS(run_check_suite("nope"), ConfigError);
  }
}
