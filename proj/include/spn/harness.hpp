#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spn/linalg.hpp"
#include "spn/solvers.hpp"

namespace spn {

// ---------------------------------------------------------------------------
// Phantoms

enum class PhantomKind { RandomGaussian, Structured };

/// Three column-stacked npix x npix component images.
struct Phantom {
  PhantomKind kind = PhantomKind::RandomGaussian;
  std::size_t npix = 0;
  Vector mu;
  Vector epsilon;
  Vector delta;

  /// [mu; epsilon; delta]
  Vector stacked() const;
};

/// RandomGaussian: seeded standard normals scaled by 1/10 (mu, eps, delta drawn
/// in that order from one stream).
///
/// Structured: per component a centred disk of radius 0.35 and an off-centre
/// rectangle [0.05, 0.3] x [-0.25, 0] in unit image coordinates, with levels
/// mu (0.6, 1.0), eps (0.4, 0.8), delta (0.5, 0.9) for (disk, rectangle). The
/// levels are multiplied by min(1, 8 / npix) so line integrals stay O(1) as
/// the grid is refined; `seed` is ignored.
Phantom generate_phantom(PhantomKind kind, std::size_t npix, std::uint64_t seed);

std::string to_string(PhantomKind kind);
PhantomKind parse_phantom_kind(const std::string& name);

// ---------------------------------------------------------------------------
// SSIM

struct SsimResult {
  double value = 0.0;
  /// The reference image is constant; a dynamic range of 1 was used.
  bool constant_reference = false;
};

/// Mean SSIM over all pixels with an 11 x 11 Gaussian window (std 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range max(ref) - min(ref), and symmetric
/// (half-sample) boundary extension. Images are column-stacked npix x npix.
SsimResult ssim(const Vector& reference, const Vector& test, std::size_t npix);

// ---------------------------------------------------------------------------
// Experiments

enum class RegularizerKind { SmoothedL1Identity, SmoothedTv };
enum class Algorithm { Spn, SpnExact, SpnQ, GaussNewton };
enum class AlphaSource { Fixed, FromSpnLambda };

std::string to_string(RegularizerKind kind);
std::string to_string(Algorithm algorithm);
std::string to_string(AlphaSource source);

struct ExperimentConfig {
  std::string id = "custom";
  std::size_t npix = 10;
  std::size_t nangles_factor = 4;
  std::size_t nstep = 3;
  double v0 = 0.75;
  double s0 = 1.0;
  double relative_noise = 0.01;
  PhantomKind phantom = PhantomKind::RandomGaussian;
  RegularizerKind regularizer = RegularizerKind::SmoothedL1Identity;
  double xi = 1e-6;
  /// Every (tau, zeta) pair is run for every algorithm.
  std::vector<double> taus{1e-6};
  std::vector<double> zetas{10.0};
  std::vector<Algorithm> algorithms{Algorithm::Spn};
  AlphaSource alpha_source = AlphaSource::FromSpnLambda;
  double alpha = 0.0;
  std::uint64_t seed = 1;
  /// Noise is drawn from seed + noise_seed_offset.
  std::uint64_t noise_seed_offset = 1;
  int fixed_iterations = 0;
  int max_outer = 500;
  bool track_ssim = false;
  bool allow_large = false;
  std::filesystem::path output_dir = "results";

  std::size_t nangles() const noexcept { return nangles_factor * npix; }

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Desk-scale setups of experiments 1-6.
  static ExperimentConfig preset(int experiment);
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_json_file(const std::filesystem::path& path);
  std::string to_json_text() const;
};

/// Output directory after applying the SPN_OUTPUT_ROOT override: a relative
/// output_dir is placed under $SPN_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

struct RunSummary {
  std::string label;
  Algorithm algorithm = Algorithm::Spn;
  double tau = 0.0;
  double zeta = 0.0;
  double alpha = 0.0;  // GN only
  bool converged = false;
  int outer_iterations = 0;
  int total_inner_iterations = 0;
  double final_kkt_norm = 0.0;
  double final_lambda = 0.0;
  double final_discrepancy_gap = 0.0;
  std::optional<std::array<double, 3>> final_ssim;
  double wall_time = 0.0;
  std::string error;
  Vector x;
  SolveTrace trace;
};

struct ExperimentResult {
  std::vector<RunSummary> runs;
  std::filesystem::path output_dir;
  double sigma = 0.0;

  bool all_converged() const;
};

/// Builds the problem, runs every combination and writes, per run,
/// <label>.csv, <label>_{mu,eps,delta}.f64 and <label>_images.json, plus
/// summary.json. Solver errors are recorded and the remaining runs continue.
/// With `write_files` false nothing touches the disk.
ExperimentResult run_experiment(const ExperimentConfig& config, bool write_files = true);

/// The per-iteration CSV exactly as run_experiment writes it.
std::string trace_csv(const SolveTrace& trace);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);

// ---------------------------------------------------------------------------
// Verification suites

struct CheckOutcome {
  std::string name;
  double error = 0.0;
  double threshold = 0.0;
  bool passed() const { return error <= threshold; }
};

/// "adjoint", "jacobian", "gradient" or "oracle". Throws ConfigError on an
/// unknown suite name.
std::vector<CheckOutcome> run_check_suite(const std::string& suite, std::uint64_t seed = 7);
std::vector<std::string> check_suite_names();
void print_check_outcomes(std::ostream& os, const std::vector<CheckOutcome>& outcomes);

}  // namespace spn
