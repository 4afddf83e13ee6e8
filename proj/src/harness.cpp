#include "spn/harness.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spn/error.hpp"
#include "spn/regularizer.hpp"
#include "spn/talbot.hpp"

namespace spn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Phantoms

Vector Phantom::stacked() const { return concat({&mu, &epsilon, &delta}); }

std::string to_string(PhantomKind kind) {
  return kind == PhantomKind::RandomGaussian ? "random_gaussian" : "structured";
}

PhantomKind parse_phantom_kind(const std::string& name) {
  if (name == "random_gaussian") return PhantomKind::RandomGaussian;
  if (name == "structured") return PhantomKind::Structured;
  throw ConfigError("unknown phantom kind '" + name + "' (random_gaussian | structured)");
}

Phantom generate_phantom(PhantomKind kind, std::size_t npix, std::uint64_t seed) {
  if (npix < 1) throw ConfigError("generate_phantom: npix must be >= 1");
  const std::size_t np = npix * npix;
  Phantom ph;
  ph.kind = kind;
  ph.npix = npix;
  ph.mu = Vector(np);
  ph.epsilon = Vector(np);
  ph.delta = Vector(np);
  Vector* parts[3] = {&ph.mu, &ph.epsilon, &ph.delta};

  if (kind == PhantomKind::RandomGaussian) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Vector* part : parts) {
      for (double& v : *part) v = normal(gen) / 10.0;
    }
    return ph;
  }

  constexpr double levels[3][2] = {{0.6, 1.0}, {0.4, 0.8}, {0.5, 0.9}};
  const double scale = std::min(1.0, 8.0 / static_cast<double>(npix));
  const double n = static_cast<double>(npix);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t col = 0; col < npix; ++col) {
      for (std::size_t row = 0; row < npix; ++row) {
        const double y = (static_cast<double>(row) + 0.5) / n - 0.5;
        const double x = (static_cast<double>(col) + 0.5) / n - 0.5;
        double v = 0.0;
        if (x * x + y * y < 0.35 * 0.35) v = levels[k][0];
        if (x > 0.05 && x < 0.3 && y > -0.25 && y < 0.0) v = levels[k][1];
        (*parts[k])[row + npix * col] = scale * v;
      }
    }
  }
  return ph;
}

// ---------------------------------------------------------------------------
// SSIM

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

std::array<double, 2 * kSsimRadius + 1> gaussian_window() {
  std::array<double, 2 * kSsimRadius + 1> g{};
  double sum = 0.0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    g[i + kSsimRadius] = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
    sum += g[i + kSsimRadius];
  }
  for (double& v : g) v /= sum;
  return g;
}

/// Half-sample symmetric extension: -1 -> 0, n -> n-1.
std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  long j = i % period;
  if (j < 0) j += period;
  return static_cast<std::size_t>(j < n ? j : period - 1 - j);
}

/// Separable Gaussian filter of a column-stacked npix x npix image.
std::vector<double> gaussian_filter(const std::vector<double>& img, std::size_t npix) {
  static const auto g = gaussian_window();
  const long n = static_cast<long>(npix);
  std::vector<double> tmp(img.size(), 0.0);
  std::vector<double> out(img.size(), 0.0);
  for (long c = 0; c < n; ++c) {
    for (long r = 0; r < n; ++r) {
      double s = 0.0;
      for (int k = -kSsimRadius; k <= kSsimRadius; ++k) {
        s += g[k + kSsimRadius] * img[reflect(r + k, n) + npix * static_cast<std::size_t>(c)];
      }
      tmp[static_cast<std::size_t>(r) + npix * static_cast<std::size_t>(c)] = s;
    }
  }
  for (long c = 0; c < n; ++c) {
    for (long r = 0; r < n; ++r) {
      double s = 0.0;
      for (int k = -kSsimRadius; k <= kSsimRadius; ++k) {
        s += g[k + kSsimRadius] * tmp[static_cast<std::size_t>(r) + npix * reflect(c + k, n)];
      }
      out[static_cast<std::size_t>(r) + npix * static_cast<std::size_t>(c)] = s;
    }
  }
  return out;
}

}  // namespace

SsimResult ssim(const Vector& reference, const Vector& test, std::size_t npix) {
  if (reference.size() != test.size()) throw DimensionError("ssim: image sizes differ");
  if (reference.size() != npix * npix) throw DimensionError("ssim: length != npix^2");
  SsimResult result;
  const auto [lo, hi] = std::minmax_element(reference.begin(), reference.end());
  double range = *hi - *lo;
  if (!(range > 0.0)) {
    range = 1.0;
    result.constant_reference = true;
  }
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);

  const std::size_t len = reference.size();
  std::vector<double> xx(len), yy(len), xy(len);
  for (std::size_t i = 0; i < len; ++i) {
    xx[i] = reference[i] * reference[i];
    yy[i] = test[i] * test[i];
    xy[i] = reference[i] * test[i];
  }
  const auto mx = gaussian_filter(reference.values(), npix);
  const auto my = gaussian_filter(test.values(), npix);
  const auto exx = gaussian_filter(xx, npix);
  const auto eyy = gaussian_filter(yy, npix);
  const auto exy = gaussian_filter(xy, npix);

  double sum = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2);
    sum += num / den;
  }
  result.value = sum / static_cast<double>(len);
  return result;
}

// ---------------------------------------------------------------------------
// Config

std::string to_string(RegularizerKind kind) {
  return kind == RegularizerKind::SmoothedL1Identity ? "smoothed-l1-identity" : "smoothed-tv";
}

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::Spn: return "spn";
    case Algorithm::SpnExact: return "spn_exact";
    case Algorithm::SpnQ: return "spn_q";
    case Algorithm::GaussNewton: return "gn";
  }
  return "?";
}

std::string to_string(AlphaSource source) {
  return source == AlphaSource::Fixed ? "fixed" : "from_spn_lambda";
}

namespace {

RegularizerKind parse_regularizer(const std::string& s) {
  if (s == "smoothed-l1-identity") return RegularizerKind::SmoothedL1Identity;
  if (s == "smoothed-tv") return RegularizerKind::SmoothedTv;
  throw ConfigError("unknown regularizer '" + s + "' (smoothed-l1-identity | smoothed-tv)");
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "spn") return Algorithm::Spn;
  if (s == "spn_exact") return Algorithm::SpnExact;
  if (s == "spn_q") return Algorithm::SpnQ;
  if (s == "gn") return Algorithm::GaussNewton;
  throw ConfigError("unknown algorithm '" + s + "' (spn | spn_exact | spn_q | gn)");
}

AlphaSource parse_alpha_source(const std::string& s) {
  if (s == "fixed") return AlphaSource::Fixed;
  if (s == "from_spn_lambda") return AlphaSource::FromSpnLambda;
  throw ConfigError("unknown alpha_source '" + s + "' (fixed | from_spn_lambda)");
}

double json_number(const json& j, const std::string& key) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "infinity" || s == "Infinity") {
      return std::numeric_limits<double>::infinity();
    }
  }
  throw ConfigError("'" + key + "' must be a number (or \"inf\")");
}

std::vector<double> json_number_list(const json& j, const std::string& key) {
  std::vector<double> out;
  if (j.is_array()) {
    for (const auto& e : j) out.push_back(json_number(e, key));
  } else {
    out.push_back(json_number(j, key));
  }
  return out;
}

json number_to_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

bool is_spn_family(Algorithm a) { return a != Algorithm::GaussNewton; }

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("ExperimentConfig: " + what); };
  if (npix < 2) fail("npix must be >= 2");
  if (npix > 64 && !allow_large) fail("npix > 64 requires allow_large");
  if (nangles_factor < 3) fail("nangles_factor must be >= 3 so that m >= n");
  if (nstep < 1) fail("nstep must be >= 1");
  if (!(v0 > 0.0 && v0 < 1.0)) fail("v0 must lie in (0,1)");
  if (!(s0 > 0.0) || !std::isfinite(s0)) fail("s0 must be positive");
  if (!(relative_noise > 0.0) || !std::isfinite(relative_noise)) {
    fail("relative_noise must be positive");
  }
  if (!(xi > 0.0) || !std::isfinite(xi)) fail("xi must be positive");
  if (taus.empty()) fail("tau list is empty");
  for (double t : taus) {
    if (!(t > 0.0) || !std::isfinite(t)) fail("tau values must be positive");
  }
  if (zetas.empty()) fail("zeta list is empty");
  for (double z : zetas) {
    if (!(z > 1.0)) fail("zeta values must be > 1 (or inf)");
  }
  if (algorithms.empty()) fail("algorithm list is empty");
  if (fixed_iterations < 0) fail("fixed_iterations must be >= 0");
  if (max_outer < 1) fail("max_outer must be >= 1");
  for (std::size_t i = 0; i < algorithms.size(); ++i) {
    if (algorithms[i] != Algorithm::GaussNewton) continue;
    if (alpha_source == AlphaSource::Fixed) {
      if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("gn with fixed alpha needs alpha > 0");
    } else if (std::none_of(algorithms.begin(), algorithms.begin() + static_cast<long>(i),
                            is_spn_family)) {
      fail("gn with alpha_source=from_spn_lambda must follow an spn-family algorithm");
    }
  }
  if (output_dir.empty()) fail("output_dir is empty");
}

ExperimentConfig ExperimentConfig::preset(int experiment) {
  ExperimentConfig c;
  c.id = std::to_string(experiment);
  c.output_dir = "results/exp" + std::to_string(experiment);
  const double inf = std::numeric_limits<double>::infinity();
  switch (experiment) {
    case 1:
      c.npix = 10;
      c.nangles_factor = 4;
      c.algorithms = {Algorithm::SpnExact, Algorithm::SpnQ};
      c.zetas = {inf};
      break;
    case 2:
      c.npix = 10;
      c.nangles_factor = 4;
      c.taus = {1e-4, 1e-6, 1e-8};
      c.zetas = {inf};
      c.fixed_iterations = 25;
      break;
    case 3:
      c.npix = 16;
      c.nangles_factor = 5;
      c.v0 = 0.5;
      c.zetas = {1.5, 2.0, 3.0, 5.0, 10.0, inf};
      break;
    case 4:
      c.npix = 32;
      c.nangles_factor = 5;
      c.v0 = 0.5;
      c.zetas = {2.0, 5.0, 10.0};
      break;
    case 5:
      c.npix = 32;
      c.nangles_factor = 5;
      c.phantom = PhantomKind::Structured;
      c.regularizer = RegularizerKind::SmoothedTv;
      c.xi = 1e-8;
      c.algorithms = {Algorithm::Spn, Algorithm::SpnQ, Algorithm::GaussNewton};
      c.track_ssim = true;
      break;
    case 6:
      c.npix = 64;
      c.nangles_factor = 5;
      c.phantom = PhantomKind::Structured;
      c.regularizer = RegularizerKind::SmoothedTv;
      c.xi = 1e-8;
      c.taus = {1e-3};
      c.algorithms = {Algorithm::Spn, Algorithm::GaussNewton};
      c.track_ssim = true;
      break;
    default:
      throw ConfigError("no preset for experiment " + std::to_string(experiment) + " (1-6)");
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  ExperimentConfig c;
  if (j.contains("preset")) {
    if (!j["preset"].is_number_integer()) throw ConfigError("'preset' must be an integer");
    c = preset(j["preset"].get<int>());
  }
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "preset") continue;
      if (key == "id") c.id = val.is_string() ? val.get<std::string>() : val.dump();
      else if (key == "npix") c.npix = val.get<std::size_t>();
      else if (key == "nangles_factor") c.nangles_factor = val.get<std::size_t>();
      else if (key == "nstep") c.nstep = val.get<std::size_t>();
      else if (key == "v0") c.v0 = json_number(val, key);
      else if (key == "s0") c.s0 = json_number(val, key);
      else if (key == "relative_noise") c.relative_noise = json_number(val, key);
      else if (key == "phantom") c.phantom = parse_phantom_kind(val.get<std::string>());
      else if (key == "regularizer") c.regularizer = parse_regularizer(val.get<std::string>());
      else if (key == "xi") c.xi = json_number(val, key);
      else if (key == "tau") c.taus = json_number_list(val, key);
      else if (key == "zeta") c.zetas = json_number_list(val, key);
      else if (key == "algorithms") {
        c.algorithms.clear();
        for (const auto& a : val) c.algorithms.push_back(parse_algorithm(a.get<std::string>()));
      } else if (key == "alpha_source") c.alpha_source = parse_alpha_source(val.get<std::string>());
      else if (key == "alpha") c.alpha = json_number(val, key);
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "noise_seed_offset") c.noise_seed_offset = val.get<std::uint64_t>();
      else if (key == "fixed_iterations") c.fixed_iterations = val.get<int>();
      else if (key == "max_outer") c.max_outer = val.get<int>();
      else if (key == "track_ssim") c.track_ssim = val.get<bool>();
      else if (key == "allow_large") c.allow_large = val.get<bool>();
      else if (key == "output_dir") c.output_dir = val.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a field of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["id"] = id;
  j["npix"] = npix;
  j["nangles_factor"] = nangles_factor;
  j["nstep"] = nstep;
  j["v0"] = v0;
  j["s0"] = s0;
  j["relative_noise"] = relative_noise;
  j["phantom"] = to_string(phantom);
  j["regularizer"] = to_string(regularizer);
  j["xi"] = xi;
  j["tau"] = json::array();
  for (double t : taus) j["tau"].push_back(number_to_json(t));
  j["zeta"] = json::array();
  for (double z : zetas) j["zeta"].push_back(number_to_json(z));
  j["algorithms"] = json::array();
  for (Algorithm a : algorithms) j["algorithms"].push_back(to_string(a));
  j["alpha_source"] = to_string(alpha_source);
  j["alpha"] = alpha;
  j["seed"] = seed;
  j["noise_seed_offset"] = noise_seed_offset;
  j["fixed_iterations"] = fixed_iterations;
  j["max_outer"] = max_outer;
  j["track_ssim"] = track_ssim;
  j["allow_large"] = allow_large;
  j["output_dir"] = output_dir.string();
  return j.dump(2);
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
  const char* root = std::getenv("SPN_OUTPUT_ROOT");
  if (root != nullptr && *root != '\0' && config.output_dir.is_relative()) {
    return std::filesystem::path(root) / config.output_dir;
  }
  return config.output_dir;
}

// ---------------------------------------------------------------------------
// Output

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string trace_csv(const SolveTrace& trace) {
  std::string out =
      "k,kkt_norm,discrepancy_gap,beta,penalty,inner_its,rel_dx,rel_dlambda,ssim_mu,ssim_eps,"
      "ssim_delta\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const TraceRecord& r : trace.records) {
    out += std::to_string(r.k) + ',' + format_double(r.kkt_norm) + ',' +
           format_double(r.discrepancy_gap) + ',' + format_double(r.step_length) + ',' +
           opt(r.penalty) + ',' + std::to_string(r.inner_iterations) + ',' +
           format_double(r.rel_dx) + ',' + opt(r.rel_dlambda);
    for (int c = 0; c < 3; ++c) {
      out += ',';
      if (r.quality) out += format_double((*r.quality)[static_cast<std::size_t>(c)]);
    }
    out += '\n';
  }
  return out;
}

bool ExperimentResult::all_converged() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunSummary& r) { return r.converged; });
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_f64(const std::filesystem::path& path, const Vector& v) {
  static_assert(std::endian::native == std::endian::little, "f64 files are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::string run_label(Algorithm a, double tau, double zeta, bool with_zeta) {
  std::string label = to_string(a) + "_tau" + format_double(tau);
  if (with_zeta) label += "_zeta" + format_double(zeta);
  return label;
}

json images_sidecar(const ExperimentConfig& c, const std::string& prefix) {
  json j;
  j["npix"] = c.npix;
  j["nangles"] = c.nangles();
  j["nstep"] = c.nstep;
  j["s0"] = c.s0;
  j["v0"] = c.v0;
  j["seed"] = c.seed;
  j["relative_noise"] = c.relative_noise;
  j["dtype"] = "float64";
  j["byte_order"] = "little";
  j["layout"] = "column-major npix x npix";
  j["files"] = {{"mu", prefix + "_mu.f64"},
                {"epsilon", prefix + "_eps.f64"},
                {"delta", prefix + "_delta.f64"}};
  return j;
}

void write_images(const std::filesystem::path& dir, const std::string& prefix, const Vector& x,
                  const ExperimentConfig& c) {
  const std::size_t np = c.npix * c.npix;
  write_f64(dir / (prefix + "_mu.f64"), x.segment(0, np));
  write_f64(dir / (prefix + "_eps.f64"), x.segment(np, np));
  write_f64(dir / (prefix + "_delta.f64"), x.segment(2 * np, np));
  write_text(dir / (prefix + "_images.json"), images_sidecar(c, prefix).dump(2) + "\n");
}

json summary_json(const RunSummary& r) {
  json j;
  j["label"] = r.label;
  j["algorithm"] = to_string(r.algorithm);
  j["tau"] = number_to_json(r.tau);
  j["zeta"] = number_to_json(r.zeta);
  if (r.algorithm == Algorithm::GaussNewton) j["alpha"] = r.alpha;
  j["converged"] = r.converged;
  j["outer_iterations"] = r.outer_iterations;
  j["total_inner_iterations"] = r.total_inner_iterations;
  j["final_kkt_norm"] = r.final_kkt_norm;
  j["final_lambda"] = r.final_lambda;
  j["final_discrepancy_gap"] = r.final_discrepancy_gap;
  if (r.final_ssim) j["final_ssim"] = *r.final_ssim;
  j["wall_time"] = r.wall_time;
  j["error"] = r.error;
  j["csv"] = r.label + ".csv";
  return j;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, bool write_files) {
  config.validate();
  ExperimentResult result;
  result.output_dir = resolve_output_dir(config);

  const std::size_t npix = config.npix;
  const std::size_t np = npix * npix;
  auto model = std::make_shared<const TalbotModel>(TalbotGeometry::make(
      npix, config.nangles(), config.nstep, config.s0, config.v0));
  const Phantom phantom = generate_phantom(config.phantom, npix, config.seed);
  const Vector x_exact = phantom.stacked();
  const NoisyData noisy = make_noisy_data(model->forward(x_exact), config.relative_noise,
                                          config.seed + config.noise_seed_offset);
  result.sigma = noisy.sigma;
  const TalbotProblem problem(model, noisy.b, noisy.sigma);

  const CsrMatrix l = config.regularizer == RegularizerKind::SmoothedTv
                          ? build_tv_operator(npix, 3)
                          : CsrMatrix::identity(model->num_unknowns());
  const SmoothedL1 regularizer(l, config.xi);

  auto quality = [&](const Vector& x) {
    return std::array<double, 3>{ssim(phantom.mu, x.segment(0, np), npix).value,
                                 ssim(phantom.epsilon, x.segment(np, np), npix).value,
                                 ssim(phantom.delta, x.segment(2 * np, np), npix).value};
  };

  if (write_files) {
    std::filesystem::create_directories(result.output_dir);
    write_text(result.output_dir / "config.json", config.to_json_text() + "\n");
    write_images(result.output_dir, "exact", x_exact, config);
  }

  for (double tau : config.taus) {
    for (std::size_t zi = 0; zi < config.zetas.size(); ++zi) {
      const double zeta = config.zetas[zi];
      std::optional<double> spn_lambda;
      for (Algorithm alg : config.algorithms) {
        // Exact SPN does not depend on zeta.
        if (alg == Algorithm::SpnExact && zi > 0) continue;
        RunSummary run;
        run.algorithm = alg;
        run.tau = tau;
        run.zeta = zeta;
        run.label = run_label(alg, tau, zeta, alg != Algorithm::SpnExact);

        OuterConfig oc;
        oc.tau = tau;
        oc.zeta = zeta;
        oc.max_outer = config.max_outer;
        oc.fixed_iterations = config.fixed_iterations;
        if (config.track_ssim) oc.quality = quality;

        const auto t0 = std::chrono::steady_clock::now();
        try {
          if (alg == Algorithm::GaussNewton) {
            if (config.alpha_source == AlphaSource::Fixed) {
              oc.alpha = config.alpha;
            } else if (spn_lambda && *spn_lambda > 0.0) {
              oc.alpha = 1.0 / *spn_lambda;
            } else {
              throw NumericalError("no converged SPN multiplier to derive alpha from");
            }
            run.alpha = oc.alpha;
            GaussNewtonResult gr = gauss_newton(problem, regularizer, oc);
            run.converged = gr.converged;
            run.x = std::move(gr.x);
            run.trace = std::move(gr.trace);
            run.final_lambda = 1.0 / oc.alpha;
            if (!gr.converged) run.error = gr.message;
          } else {
            SolveResult sr = alg == Algorithm::Spn        ? spn(problem, regularizer, oc)
                             : alg == Algorithm::SpnExact ? spn_exact(problem, regularizer, oc)
                                                          : spn_q(problem, regularizer, oc);
            run.converged = sr.converged;
            run.final_lambda = sr.iterate.lambda;
            run.x = std::move(sr.iterate.x);
            run.trace = std::move(sr.trace);
            if (sr.converged) spn_lambda = run.final_lambda;
            if (!sr.converged) run.error = sr.message;
          }
          run.outer_iterations = static_cast<int>(run.trace.records.size());
          run.total_inner_iterations = run.trace.total_inner_iterations();
          run.final_kkt_norm = run.trace.records.empty() ? run.trace.initial_kkt_norm
                                                         : run.trace.records.back().kkt_norm;
          run.final_discrepancy_gap = run.trace.records.empty()
                                          ? run.trace.initial_discrepancy_gap
                                          : run.trace.records.back().discrepancy_gap;
          run.final_ssim = quality(run.x);
        } catch (const Error& e) {
          run.converged = false;
          run.error = e.what();
        }
        run.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (write_files) {
          write_text(result.output_dir / (run.label + ".csv"), trace_csv(run.trace));
          if (!run.x.empty()) write_images(result.output_dir, run.label, run.x, config);
        }
        result.runs.push_back(std::move(run));
      }
    }
  }

  if (write_files) {
    json s;
    s["id"] = config.id;
    s["sigma"] = result.sigma;
    s["all_converged"] = result.all_converged();
    s["runs"] = json::array();
    for (const RunSummary& r : result.runs) s["runs"].push_back(summary_json(r));
    write_text(result.output_dir / "summary.json", s.dump(2) + "\n");
  }
  return result;
}

}  // namespace spn
