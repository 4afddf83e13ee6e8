// Command-line front end: run experiments, verification suites, phantoms.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spn/error.hpp"
#include "spn/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kNotConverged = 1;
constexpr int kConfigError = 2;

int cmd_run(const std::string& config_path, int preset, const std::string& output) {
  spn::ExperimentConfig config = config_path.empty()
                                     ? spn::ExperimentConfig::preset(preset)
                                     : spn::ExperimentConfig::from_json_file(config_path);
  if (!output.empty()) config.output_dir = output;
  config.validate();

  const spn::ExperimentResult res = spn::run_experiment(config);
  std::printf("experiment %s  sigma %.6e  output %s\n", config.id.c_str(), res.sigma,
              res.output_dir.string().c_str());
  std::printf("%-36s %5s %6s %8s %12s %12s %9s\n", "run", "conv", "outer", "inner", "final |F|",
              "lambda", "time[s]");
  for (const spn::RunSummary& r : res.runs) {
    std::printf("%-36s %5s %6d %8d %12.4e %12.6g %9.2f\n", r.label.c_str(),
                r.converged ? "yes" : "no", r.outer_iterations, r.total_inner_iterations,
                r.final_kkt_norm, r.final_lambda, r.wall_time);
    if (!r.error.empty()) std::printf("    %s\n", r.error.c_str());
  }
  return res.all_converged() ? kOk : kNotConverged;
}

int cmd_check(const std::string& suite) {
  std::vector<std::string> suites =
      suite == "all" ? spn::check_suite_names() : std::vector<std::string>{suite};
  bool ok = true;
  for (const std::string& s : suites) {
    const auto outcomes = spn::run_check_suite(s);
    spn::print_check_outcomes(std::cout, outcomes);
    for (const auto& o : outcomes) ok = ok && o.passed();
  }
  return ok ? kOk : kNotConverged;
}

int cmd_phantom(const std::string& kind, std::size_t npix, std::uint64_t seed,
                const std::string& out) {
  const spn::Phantom ph = spn::generate_phantom(spn::parse_phantom_kind(kind), npix, seed);
  const spn::Vector x = ph.stacked();
  const std::filesystem::path data = out + ".f64";
  if (data.has_parent_path()) std::filesystem::create_directories(data.parent_path());
  std::ofstream f(data, std::ios::binary);
  f.write(reinterpret_cast<const char*>(x.data()),
          static_cast<std::streamsize>(x.size() * sizeof(double)));
  nlohmann::json side;
  side["kind"] = kind;
  side["npix"] = npix;
  side["seed"] = seed;
  side["dtype"] = "float64";
  side["byte_order"] = "little";
  side["layout"] = "[mu; epsilon; delta], each column-major npix x npix";
  side["file"] = data.filename().string();
  std::ofstream(out + ".json") << side.dump(2) << "\n";
  std::printf("wrote %s (%zu values)\n", data.string().c_str(), x.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential Projected Newton toolkit for discrepancy-principle regularization"};
  app.require_subcommand(1);

  std::string config_path, output;
  int preset = 1;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config or a preset");
  auto* cfg_opt = run->add_option("--config", config_path, "experiment config (JSON)");
  run->add_option("--preset", preset, "built-in experiment 1-6")->excludes(cfg_opt);
  run->add_option("--output", output, "override output_dir");

  std::string suite = "all";
  auto* check = app.add_subcommand("check", "Run verification oracles and print pass/fail");
  check->add_option("--suite", suite, "adjoint | jacobian | gradient | oracle | all")
      ->check(CLI::IsMember({"adjoint", "jacobian", "gradient", "oracle", "all"}));

  std::string kind = "random_gaussian", out;
  std::size_t npix = 16;
  std::uint64_t seed = 1;
  auto* phantom = app.add_subcommand("phantom", "Write a phantom as flat f64 + JSON sidecar");
  phantom->add_option("--kind", kind, "random_gaussian | structured")
      ->check(CLI::IsMember({"random_gaussian", "structured"}));
  phantom->add_option("--npix", npix, "image side length")->check(CLI::PositiveNumber);
  phantom->add_option("--seed", seed, "random seed");
  phantom->add_option("--out", out, "output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path, preset, output);
    if (*check) return cmd_check(suite);
    if (*phantom) return cmd_phantom(kind, npix, seed, out);
  } catch (const spn::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNotConverged;
  }
  return kOk;
}
