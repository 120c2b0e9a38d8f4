// qmctumor: convergence studies and sub-tools for the tumor-growth UQ model.
//
//   qmctumor study --config study.cfg --workers 8
//   qmctumor solve --config study.cfg --y "0,0,...,0"
//   qmctumor kl    --config lognormal.cfg --out kl/
//   qmctumor cbc   --set cbc.n=1024 --set field.s=16
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <qmctumor/study.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<long long> seed;
  std::optional<long long> workers;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Config file (key=value lines)");
  cmd->add_option("--set", o.sets, "Override a config key, e.g. --set qmc.m_max=8");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--workers", o.workers, "Worker threads");
  cmd->add_option("--out", o.out, "Output directory");
}

qmctumor::StudyConfig resolve(const CommonOptions& o) {
  std::vector<std::string> sets = o.sets;
  if (o.seed) sets.push_back("seed=" + std::to_string(*o.seed));
  if (o.workers) sets.push_back("workers=" + std::to_string(*o.workers));
  if (!o.out.empty()) sets.push_back("output.dir=" + o.out);
  return qmctumor::load_study_config(o.config, sets);
}

int run(int argc, char** argv) {
  CLI::App app{"QMC uncertainty quantification for a tumor-growth reaction-diffusion model"};
  app.require_subcommand(1);

  CommonOptions study_opts, solve_opts, kl_opts, cbc_opts;
  auto* study = app.add_subcommand("study", "Run the QMC/MC convergence ladder");
  add_common(study, study_opts);
  auto* solve = app.add_subcommand("solve", "Solve once at explicit parameters");
  add_common(solve, solve_opts);
  std::string y_text;
  std::string trajectory_path;
  solve->add_option("--y", y_text, "Parameter vector v1,v2,...")->required();
  solve->add_option("--trajectory", trajectory_path, "Write the nodal trajectory here");
  auto* kl = app.add_subcommand("kl", "Precompute KL modes for both fields");
  add_common(kl, kl_opts);
  auto* cbc = app.add_subcommand("cbc", "Construct a generating vector by CBC");
  add_common(cbc, cbc_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (study->parsed()) {
    const auto config = resolve(study_opts);
    const auto res = qmctumor::run_study(config);
    for (const auto& r : res.rows) {
      std::printf("%-3s m=%2u N=%6llu mean=%.10g err=%.4g\n", r.kind.c_str(), r.m,
                  static_cast<unsigned long long>(r.n), r.mean, r.error);
    }
    std::printf("qmc slope %.4f\nmc slope  %.4f\nwritten to %s\n", res.qmc_slope, res.mc_slope,
                res.output_dir.string().c_str());
  } else if (solve->parsed()) {
    const auto config = resolve(solve_opts);
    const auto y = qmctumor::parse_parameter_vector(y_text);
    const auto res = qmctumor::run_single(config, y, !trajectory_path.empty());
    std::printf("G=%.17g\n", res.qoi);
    std::printf("apriori_constant=%.17g\n", res.apriori_constant);
    std::printf("min=%.17g max=%.17g newton_iterations=%d\n", res.solve.min_value,
                res.solve.max_value, res.solve.newton_iterations);
    if (!trajectory_path.empty()) {
      std::ofstream out(trajectory_path);
      if (!out) throw qmctumor::ValidationError("cannot write '" + trajectory_path + "'");
      qmctumor::write_trajectory(out, res.solve.trajectory);
    }
  } else if (kl->parsed()) {
    const auto config = resolve(kl_opts);
    const auto res = qmctumor::run_kl(config);
    std::printf("modes=%zu orthonormality_error=%.3g decay_slope_a=%.4f decay_slope_kappa=%.4f\n",
                res.modes_a.num_modes(), res.orthonormality_error, res.decay_slope_a,
                res.decay_slope_kappa);
  } else if (cbc->parsed()) {
    const auto config = resolve(cbc_opts);
    const auto res = qmctumor::run_cbc(config);
    std::printf("s=%zu wce=%.17g written to %s\n", res.z.size(),
                res.wce_per_dimension.empty() ? 0.0 : res.wce_per_dimension.back(),
                config.output_dir.c_str());
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const qmctumor::SampleFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const qmctumor::NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const qmctumor::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const qmctumor::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
