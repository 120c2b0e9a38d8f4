#ifndef QMCTUMOR_STUDY_HPP
#define QMCTUMOR_STUDY_HPP

// Configuration-driven drivers behind the command line tool: convergence
// studies, single solves, KL precomputation and CBC construction.

#include <qmctumor/config.hpp>
#include <qmctumor/errors.hpp>
#include <qmctumor/estimator.hpp>
#include <qmctumor/fem.hpp>
#include <qmctumor/lattice.hpp>
#include <qmctumor/mesh.hpp>
#include <qmctumor/random_fields.hpp>
#include <qmctumor/solver.hpp>
#include <qmctumor/treatment.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace qmctumor {

enum class FieldMode { uniform, lognormal };

struct StudyConfig {
  FieldMode mode = FieldMode::uniform;
  std::uint64_t seed = 2024;
  unsigned workers = 1;
  std::string output_dir = "out";

  bool structured_mesh = true;
  double mesh_length = 100.0;
  int mesh_cells = 25;
  std::string mesh_path;

  SolverConfig solver;

  double initial_amplitude = 0.8;
  double initial_width = 5.0;
  std::optional<Point> initial_center; // domain centroid when empty

  std::vector<double> rt_times, ct_times;
  double rt_dose = 2.0, rt_alpha = 0.025, rt_beta = 0.0025;
  std::optional<double> rt_gamma; // 1/dt when empty
  double ct_concentration = 1.0, ct_alpha = 0.9, ct_beta = 24.0 / 1.8;

  double a0 = 0.05, kappa0 = 0.3;
  std::size_t s = 16;
  double nu = 2.0;

  double correlation_length = 180.0;
  double variance_a = 0.2336, variance_kappa = 0.0682;
  std::size_t kl_oversample = 10;
  int kl_power_iterations = 1;
  std::uint64_t kl_seed = 1;
  std::optional<std::size_t> kl_modes; // s/2 when empty
  std::string kl_cache_a, kl_cache_kappa;

  unsigned m_min = 4, m_max = 10;
  std::size_t shifts = 8;
  std::string vector_source = "cbc"; // "cbc" or "file:PATH"
  double weight_decay = 2.0;
  bool mc_enabled = true;

  std::optional<std::uint64_t> cbc_n;
  std::optional<std::size_t> cbc_s;
  bool cbc_embedded = false;

  ConfigTable table; // resolved key/value view

  std::size_t kl_mode_count() const { return kl_modes.value_or(s / 2); }

  static StudyConfig from_table(const ConfigTable& t) {
    StudyConfig c;
    c.table = t;
    ConfigReader r(t);

    const auto& mode = r.text("mode");
    if (mode == "uniform") {
      c.mode = FieldMode::uniform;
    } else if (mode == "lognormal") {
      c.mode = FieldMode::lognormal;
    } else {
      r.fail("mode", "must be 'uniform' or 'lognormal'");
    }
    const auto seed = r.integer("seed");
    r.require(seed >= 0, "seed", "must be nonnegative");
    c.seed = static_cast<std::uint64_t>(seed);
    const auto workers = r.integer("workers");
    r.require(workers >= 1 && workers <= 1024, "workers", "must lie in [1, 1024]");
    c.workers = static_cast<unsigned>(std::max<long long>(workers, 1));
    c.output_dir = r.text("output.dir");
    r.require(!c.output_dir.empty(), "output.dir", "must not be empty");

    const auto& src = r.text("mesh.source");
    if (src == "structured") {
      c.structured_mesh = true;
    } else if (src == "file") {
      c.structured_mesh = false;
    } else {
      r.fail("mesh.source", "must be 'structured' or 'file'");
    }
    c.mesh_length = r.number("mesh.length");
    r.require(c.mesh_length > 0.0, "mesh.length", "must be positive");
    const auto cells = r.integer("mesh.cells");
    r.require(cells >= 1 && cells <= 4096, "mesh.cells", "must lie in [1, 4096]");
    c.mesh_cells = static_cast<int>(cells);
    c.mesh_path = r.text("mesh.path");
    if (!c.structured_mesh) {
      r.require(!c.mesh_path.empty() && std::filesystem::exists(c.mesh_path), "mesh.path",
                "mesh file '" + c.mesh_path + "' does not exist");
    }

    c.solver.dt = r.number("time.dt");
    c.solver.final_time = r.number("time.final");
    r.require(c.solver.dt > 0.0, "time.dt", "must be positive");
    r.require(c.solver.final_time >= c.solver.dt, "time.final", "must be at least time.dt");
    c.solver.newton_tol = r.number("solver.newton_tol");
    r.require(c.solver.newton_tol > 0.0, "solver.newton_tol", "must be positive");
    const auto iters = r.integer("solver.newton_max_iter");
    r.require(iters >= 1, "solver.newton_max_iter", "must be >= 1");
    c.solver.newton_max_iter = static_cast<int>(iters);
    c.solver.mass_lumping = r.boolean("solver.mass_lumping");
    const auto& shift = r.text("solver.lambda_shift");
    if (shift == "off" || shift == "0") {
      c.solver.lambda_shift = LambdaShift::off();
    } else if (shift == "auto") {
      c.solver.lambda_shift = LambdaShift::automatic();
    } else {
      c.solver.lambda_shift = LambdaShift::fixed(r.number("solver.lambda_shift"));
    }

    c.initial_amplitude = r.number("initial.amplitude");
    r.require(c.initial_amplitude >= 0.0 && c.initial_amplitude <= 1.0, "initial.amplitude",
              "must lie in [0, 1]");
    c.initial_width = r.number("initial.width");
    r.require(c.initial_width > 0.0, "initial.width", "must be positive");
    if (r.text("initial.center") != "auto") {
      const auto xy = r.number_list("initial.center");
      if (xy.size() == 2) {
        c.initial_center = Point{xy[0], xy[1]};
      } else {
        r.fail("initial.center", "must be 'auto' or 'x,y'");
      }
    }

    c.rt_times = r.number_list("treatment.rt_times");
    c.ct_times = r.number_list("treatment.ct_times");
    r.require(std::is_sorted(c.rt_times.begin(), c.rt_times.end()), "treatment.rt_times",
              "must be ascending");
    r.require(std::is_sorted(c.ct_times.begin(), c.ct_times.end()), "treatment.ct_times",
              "must be ascending");
    c.rt_dose = r.number("treatment.rt_dose");
    r.require(c.rt_dose >= 0.0, "treatment.rt_dose", "must be nonnegative");
    c.rt_alpha = r.number("treatment.rt_alpha");
    c.rt_beta = r.number("treatment.rt_beta");
    r.require(c.rt_alpha > 0.0, "treatment.rt_alpha", "must be positive");
    r.require(c.rt_beta > 0.0, "treatment.rt_beta", "must be positive");
    if (r.text("treatment.rt_gamma") != "auto") {
      c.rt_gamma = r.number("treatment.rt_gamma");
      r.require(*c.rt_gamma >= 0.0, "treatment.rt_gamma", "must be nonnegative");
    }
    c.ct_concentration = r.number("treatment.ct_concentration");
    r.require(c.ct_concentration >= 0.0, "treatment.ct_concentration", "must be nonnegative");
    c.ct_alpha = r.number("treatment.ct_alpha");
    c.ct_beta = r.number("treatment.ct_beta");
    r.require(c.ct_alpha > 0.0, "treatment.ct_alpha", "must be positive");
    r.require(c.ct_beta > 0.0, "treatment.ct_beta", "must be positive");

    c.a0 = r.number("field.a0");
    c.kappa0 = r.number("field.kappa0");
    r.require(c.a0 > 0.0, "field.a0", "must be positive");
    r.require(c.kappa0 >= 0.0, "field.kappa0", "must be nonnegative");
    const auto s = r.integer("field.s");
    r.require(s >= 2 && s % 2 == 0, "field.s", "must be even and >= 2");
    c.s = static_cast<std::size_t>(std::max<long long>(s, 0));
    c.nu = r.number("field.nu");
    r.require(c.nu > 1.0, "field.nu", "must exceed 1");

    c.correlation_length = r.number("kl.correlation_length");
    c.variance_a = r.number("kl.variance_a");
    c.variance_kappa = r.number("kl.variance_kappa");
    r.require(c.correlation_length > 0.0, "kl.correlation_length", "must be positive");
    r.require(c.variance_a > 0.0, "kl.variance_a", "must be positive");
    r.require(c.variance_kappa > 0.0, "kl.variance_kappa", "must be positive");
    const auto over = r.integer("kl.oversample");
    r.require(over >= 0, "kl.oversample", "must be nonnegative");
    c.kl_oversample = static_cast<std::size_t>(std::max<long long>(over, 0));
    const auto power = r.integer("kl.power_iterations");
    r.require(power >= 0, "kl.power_iterations", "must be nonnegative");
    c.kl_power_iterations = static_cast<int>(power);
    const auto kl_seed = r.integer("kl.seed");
    r.require(kl_seed >= 0, "kl.seed", "must be nonnegative");
    c.kl_seed = static_cast<std::uint64_t>(kl_seed);
    if (r.text("kl.modes") != "auto") {
      const auto modes = r.integer("kl.modes");
      r.require(modes >= 1, "kl.modes", "must be >= 1");
      c.kl_modes = static_cast<std::size_t>(std::max<long long>(modes, 1));
    }
    c.kl_cache_a = r.text("kl.cache_a");
    c.kl_cache_kappa = r.text("kl.cache_kappa");
    r.require(c.kl_cache_a.empty() == c.kl_cache_kappa.empty(), "kl.cache_a",
              "kl.cache_a and kl.cache_kappa must be given together");
    for (const char* key : {"kl.cache_a", "kl.cache_kappa"}) {
      const auto& p = r.text(key);
      r.require(p.empty() || std::filesystem::exists(p), key, "file '" + p + "' does not exist");
    }

    const auto m_min = r.integer("qmc.m_min");
    const auto m_max = r.integer("qmc.m_max");
    r.require(m_min >= 1 && m_min <= 24, "qmc.m_min", "must lie in [1, 24]");
    r.require(m_max >= 1 && m_max <= 24, "qmc.m_max", "must lie in [1, 24]");
    r.require(m_min <= m_max, "qmc.m_min", "must not exceed qmc.m_max");
    c.m_min = static_cast<unsigned>(std::max<long long>(m_min, 0));
    c.m_max = static_cast<unsigned>(std::max<long long>(m_max, 0));
    const auto shifts = r.integer("qmc.shifts");
    r.require(shifts >= 2, "qmc.shifts", "must be >= 2");
    c.shifts = static_cast<std::size_t>(std::max<long long>(shifts, 0));
    c.vector_source = r.text("qmc.vector");
    if (c.vector_source.rfind("file:", 0) == 0) {
      const auto p = c.vector_source.substr(5);
      r.require(std::filesystem::exists(p), "qmc.vector", "file '" + p + "' does not exist");
    } else {
      r.require(c.vector_source == "cbc", "qmc.vector", "must be 'cbc' or 'file:PATH'");
    }
    c.weight_decay = r.number("qmc.weight_decay");
    r.require(c.weight_decay > 1.0, "qmc.weight_decay", "must exceed 1");
    c.mc_enabled = r.boolean("mc.enabled");

    if (r.text("cbc.n") != "auto") {
      const auto n = r.integer("cbc.n");
      r.require(n >= 2 && is_prime_power(static_cast<std::uint64_t>(std::max<long long>(n, 0))),
                "cbc.n", "must be a prime power");
      c.cbc_n = static_cast<std::uint64_t>(std::max<long long>(n, 0));
    }
    if (r.text("cbc.s") != "auto") {
      const auto cs = r.integer("cbc.s");
      r.require(cs >= 1, "cbc.s", "must be >= 1");
      c.cbc_s = static_cast<std::size_t>(std::max<long long>(cs, 1));
    }
    c.cbc_embedded = r.boolean("cbc.embedded");

    r.throw_if_failed();
    return c;
  }
};

inline StudyConfig load_study_config(const std::string& path,
                                     const std::vector<std::string>& overrides = {}) {
  ConfigTable t = path.empty() ? ConfigTable{} : ConfigTable::load(path);
  for (const auto& o : overrides) t.set_assignment(o);
  return StudyConfig::from_table(t);
}

// ---------------------------------------------------------------------------

/// Everything needed to map a parameter vector to the quantity of interest.
/// Immutable after construction and safe to evaluate concurrently.
class StudyProblem {
public:
  explicit StudyProblem(const StudyConfig& config) : config_(config) {
    mesh_ = config.structured_mesh ? generate_structured(config.mesh_length, config.mesh_cells)
                                   : load_mesh(config.mesh_path);
    disc_ = std::make_unique<Discretization>(mesh_);

    RadiotherapySchedule rt;
    rt.times = config.rt_times;
    rt.dose = config.rt_dose;
    rt.alpha = config.rt_alpha;
    rt.beta = config.rt_beta;
    rt.gamma_scale = config.rt_gamma.value_or(1.0 / config.solver.dt);
    ChemotherapySchedule ct;
    ct.times = config.ct_times;
    ct.concentration = config.ct_concentration;
    ct.alpha = config.ct_alpha;
    ct.beta = config.ct_beta;
    treatment_ = Treatment(std::move(rt), std::move(ct));

    const Point center = config.initial_center.value_or(mesh_.centroid());
    u0_ = initial_condition_gaussian(mesh_, center, config.initial_amplitude,
                                     config.initial_width);

    if (config.mode == FieldMode::uniform) {
      uniform_.emplace(UniformAffineModel(config.a0, config.kappa0, config.nu, config.s,
                                          config.mesh_length),
                       mesh_);
    } else {
      KLModes ma, mk;
      if (!config.kl_cache_a.empty()) {
        ma = load_kl_cache(config.kl_cache_a);
        mk = load_kl_cache(config.kl_cache_kappa);
        if (ma.num_nodes() != mesh_.num_nodes() || mk.num_nodes() != mesh_.num_nodes()) {
          throw ValidationError("KL cache node count does not match the mesh");
        }
      } else {
        ma = compute_field_modes(config.variance_a);
        mk = compute_field_modes(config.variance_kappa);
      }
      lognormal_.emplace(config.a0, config.kappa0, std::move(ma), std::move(mk), config.s);
    }
  }

  // disc_ refers to mesh_
  StudyProblem(const StudyProblem&) = delete;
  StudyProblem& operator=(const StudyProblem&) = delete;

  KLModes compute_field_modes(double variance) const {
    const auto spec = calibrate_covariance(config_.correlation_length, variance);
    const std::size_t modes = config_.kl_mode_count();
    if (modes + config_.kl_oversample > mesh_.num_nodes()) {
      throw ValidationError("kl modes + oversample (" +
                            std::to_string(modes + config_.kl_oversample) +
                            ") exceed the node count " + std::to_string(mesh_.num_nodes()));
    }
    return compute_kl(mesh_, spec, modes, config_.kl_oversample, config_.kl_seed,
                      config_.kl_power_iterations);
  }

  const StudyConfig& config() const noexcept { return config_; }
  const Mesh& mesh() const noexcept { return mesh_; }
  const Discretization& discretization() const noexcept { return *disc_; }
  const Treatment& treatment() const noexcept { return treatment_; }
  const StateVector& initial_state() const noexcept { return u0_; }
  std::size_t dimension() const noexcept { return config_.s; }
  const LognormalKLModel* lognormal() const { return lognormal_ ? &*lognormal_ : nullptr; }
  const UniformAffineModel* uniform() const { return uniform_ ? &uniform_->model() : nullptr; }

  PointTarget target() const {
    return config_.mode == FieldMode::uniform ? PointTarget::centered_cube : PointTarget::gaussian;
  }

  CoefficientSample coefficients(std::span<const double> y) const {
    return uniform_ ? uniform_->sample(y) : lognormal_->sample(mesh_, y);
  }

  SolveResult solve(std::span<const double> y, const SolverConfig& solver) const {
    const auto c = coefficients(y);
    return solve_configured(*disc_, c.diffusion, c.proliferation, treatment_, u0_, solver);
  }

  SolveResult solve(std::span<const double> y) const { return solve(y, config_.solver); }

  double qoi(std::span<const double> y) const {
    return qoi_total_cellularity(solve(y).terminal, *disc_);
  }

  Integrand integrand() const {
    return [this](std::span<const double> y) { return qoi(y); };
  }

private:
  StudyConfig config_;
  Mesh mesh_;
  std::unique_ptr<Discretization> disc_;
  Treatment treatment_;
  StateVector u0_;
  std::optional<UniformFieldSampler> uniform_;
  std::optional<LognormalKLModel> lognormal_;
};

// ---------------------------------------------------------------------------
// Outputs

struct LevelRow {
  std::string kind; // "qmc" or "mc"
  unsigned m = 0;
  std::uint64_t n = 0;
  std::size_t r = 0;
  double mean = 0.0;
  double error = 0.0; // RMS for qmc, standard error for mc
  double wall_seconds = 0.0;
};

struct StudyResult {
  std::vector<LevelRow> rows;
  double qmc_slope = std::nan("");
  double mc_slope = std::nan("");
  std::string vector_description;
  std::vector<std::uint64_t> generating_vector;
  std::filesystem::path output_dir;
};

namespace detail {

inline std::string csv_number(double v) { return format_double(v); }

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + p.string() + "'");
  out << content;
}

inline double slope_of(const std::vector<LevelRow>& rows, const std::string& kind) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (r.kind == kind && r.error > 0.0) pts.emplace_back(static_cast<double>(r.n), r.error);
  }
  if (pts.size() < 3) return std::nan("");
  return fit_rate(pts);
}

} // namespace detail

/// CSV with the fixed column order kind,m,N,R,mean,rms_or_stderr,wall_seconds.
/// Wall times are written as 0 so the file is reproducible; measured times
/// go to timings.csv.
inline std::string results_csv(const std::vector<LevelRow>& rows) {
  std::string out = "kind,m,N,R,mean,rms_or_stderr,wall_seconds\n";
  for (const auto& r : rows) {
    out += r.kind + "," + std::to_string(r.m) + "," + std::to_string(r.n) + "," +
           std::to_string(r.r) + "," + detail::csv_number(r.mean) + "," +
           detail::csv_number(r.error) + ",0\n";
  }
  return out;
}

inline std::string gnuplot_script() {
  return "# gnuplot -p plot.gp\n"
         "set datafile separator ','\n"
         "set logscale xy\n"
         "set xlabel 'PDE solves per level (R N)'\n"
         "set ylabel 'error estimate'\n"
         "set key top right\n"
         "plot 'results.csv' using ((strcol(1) eq 'qmc') ? $3*$4 : 1/0):6 with linespoints "
         "title 'QMC RMS', \\\n"
         "     'results.csv' using ((strcol(1) eq 'mc') ? $3*$4 : 1/0):6 with linespoints "
         "title 'MC standard error'\n";
}

/// Generating vector for the study: CBC (embedded over the ladder) with
/// product weights j^-decay, or the first s entries of a file.
inline std::pair<std::vector<std::uint64_t>, std::string> study_generating_vector(
    const StudyConfig& config) {
  if (config.vector_source.rfind("file:", 0) == 0) {
    const auto path = config.vector_source.substr(5);
    auto f = load_generating_vector(path, config.s);
    std::ostringstream desc;
    desc << "file:" << path << " fnv1a64=" << std::hex << std::setw(16) << std::setfill('0')
         << f.hash;
    return {f.z, desc.str()};
  }
  const auto w = product_weights(config.s, config.weight_decay);
  auto res = cbc_construct_embedded(config.m_min, config.m_max, config.s, w);
  std::ostringstream desc;
  desc << "cbc embedded m=" << config.m_min << ".." << config.m_max
       << " product weights j^-" << detail::format_double(config.weight_decay);
  return {res.z, desc.str()};
}

inline StudyResult run_study(const StudyConfig& config) {
  const auto wall_start = std::chrono::system_clock::now();
  StudyResult out;
  out.output_dir = config.output_dir;
  std::filesystem::create_directories(out.output_dir);

  const StudyProblem problem(config);
  auto [z, desc] = study_generating_vector(config);
  out.generating_vector = z;
  out.vector_description = desc;
  const auto g = problem.integrand();

  // A failed solve aborts the study; its coordinates go to failure.txt.
  auto record_failure = [&](const std::string& kind, const SampleFailure& e) {
    std::ostringstream f;
    f << "kind=" << kind << "\n"
      << "point=" << e.point() << "\n"
      << "shift=" << e.shift() << "\n"
      << "y=";
    for (std::size_t j = 0; j < e.parameters().size(); ++j) {
      f << (j ? "," : "") << detail::format_double(e.parameters()[j]);
    }
    f << "\nmessage=" << e.what() << "\n";
    detail::write_file(out.output_dir / "failure.txt", f.str());
  };
  std::vector<EstimatorResult> qmc;
  try {
    qmc = qmc_ladder(g, z, config.m_min, config.m_max, config.shifts, config.seed,
                     problem.target(), config.workers);
  } catch (const SampleFailure& e) {
    record_failure("qmc", e);
    throw;
  }
  for (unsigned m = config.m_min; m <= config.m_max; ++m) {
    const auto& lv = qmc[m - config.m_min];
    out.rows.push_back({"qmc", m, lv.n_points, lv.n_shifts, lv.mean, lv.rms_error,
                        lv.wall_seconds});
  }
  if (config.mc_enabled) {
    std::vector<MonteCarloResult> mc;
    try {
      mc = mc_ladder(g, config.s, config.m_min, config.m_max, config.shifts, config.seed,
                     problem.target(), config.workers);
    } catch (const SampleFailure& e) {
      record_failure("mc", e);
      throw;
    }
    for (unsigned m = config.m_min; m <= config.m_max; ++m) {
      const auto& lv = mc[m - config.m_min];
      out.rows.push_back({"mc", m, std::uint64_t{1} << m, config.shifts, lv.mean,
                          lv.standard_error, lv.wall_seconds});
    }
  }
  out.qmc_slope = detail::slope_of(out.rows, "qmc");
  out.mc_slope = detail::slope_of(out.rows, "mc");

  const std::string csv = results_csv(out.rows);
  detail::write_file(out.output_dir / "results.csv", csv);

  std::string timings = "kind,m,wall_seconds\n";
  for (const auto& r : out.rows) {
    timings += r.kind + "," + std::to_string(r.m) + "," + detail::csv_number(r.wall_seconds) + "\n";
  }
  const auto t = std::chrono::system_clock::to_time_t(wall_start);
  std::ostringstream stamp;
  stamp << std::put_time(std::gmtime(&t), "%Y-%m-%dT%H:%M:%SZ");
  timings += "# started " + stamp.str() + "\n";
  detail::write_file(out.output_dir / "timings.csv", timings);

  std::ostringstream summary;
  summary << "qmc_slope=" << detail::format_double(out.qmc_slope) << "\n"
          << "mc_slope=" << detail::format_double(out.mc_slope) << "\n";
  detail::write_file(out.output_dir / "summary.txt", summary.str());

  std::ostringstream meta;
  meta << "# resolved configuration\n" << config.table.dump();
  meta << "# inputs\n";
  meta << "vector.source=" << out.vector_description << "\n";
  meta << "vector.z=";
  for (std::size_t j = 0; j < z.size(); ++j) meta << (j ? "," : "") << z[j];
  meta << "\n";
  meta << "mesh.nodes=" << problem.mesh().num_nodes() << "\n";
  meta << "mesh.triangles=" << problem.mesh().num_triangles() << "\n";
  if (config.mode == FieldMode::lognormal) {
    const auto* ln = problem.lognormal();
    meta << "kl.gamma_a=" << detail::format_double(ln->modes_a().gamma) << "\n"
         << "kl.delta_a=" << detail::format_double(ln->modes_a().delta) << "\n"
         << "kl.gamma_kappa=" << detail::format_double(ln->modes_kappa().gamma) << "\n"
         << "kl.delta_kappa=" << detail::format_double(ln->modes_kappa().delta) << "\n"
         << "kl.calibration=matern nu_M=1: k=sqrt(8)/corr_length, delta=gamma k^2, "
            "variance=1/(4 pi gamma delta)\n";
  }
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(csv);
  meta << "results.csv.fnv1a64=" << hash.str() << "\n";
  detail::write_file(out.output_dir / "metadata.txt", meta.str());
  detail::write_file(out.output_dir / "plot.gp", gnuplot_script());
  return out;
}

// ---------------------------------------------------------------------------

struct SingleRunResult {
  double qoi = 0.0;
  double apriori_constant = 0.0;
  double lambda = 0.0;
  SolveResult solve;
};

inline std::vector<double> parse_parameter_vector(const std::string& text) {
  std::vector<double> y;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = ConfigTable::trim(item);
    try {
      std::size_t pos = 0;
      y.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument("x");
    } catch (const std::exception&) {
      throw ValidationError("--y: '" + item + "' is not a number");
    }
  }
  return y;
}

/// One solve at explicit parameters plus the a priori diagnostic constant.
inline SingleRunResult run_single(const StudyConfig& config, std::span<const double> y,
                                  bool keep_trajectory = false) {
  const StudyProblem problem(config);
  if (y.size() != problem.dimension()) {
    throw ValidationError("--y has " + std::to_string(y.size()) + " entries, expected " +
                          std::to_string(problem.dimension()));
  }
  CoefficientSample c;
  try {
    c = problem.coefficients(y);
  } catch (const InvalidArgument& e) {
    throw ValidationError(e.what());
  }
  SolverConfig sc = config.solver;
  sc.keep_trajectory = keep_trajectory;
  SingleRunResult out;
  out.solve = solve_configured(problem.discretization(), c.diffusion, c.proliferation,
                               problem.treatment(), problem.initial_state(), sc);
  out.qoi = qoi_total_cellularity(out.solve.terminal, problem.discretization());
  const auto [amin, amax] = std::minmax_element(c.diffusion.begin(), c.diffusion.end());
  const double kmax = *std::max_element(c.proliferation.begin(), c.proliferation.end());
  out.lambda = sc.lambda_shift.mode == LambdaShift::Mode::fixed ? sc.lambda_shift.value
                                                                : kmax + 1.0;
  out.apriori_constant = apriori_constant(*amin, *amax, kmax,
                                          problem.treatment().f_max_bound(sc.dt), out.lambda);
  return out;
}

// ---------------------------------------------------------------------------

struct KLRunResult {
  KLModes modes_a, modes_kappa;
  double orthonormality_error = 0.0;
  double decay_slope_a = 0.0;
  double decay_slope_kappa = 0.0;
};

/// Computes both fields' KL modes and writes kl_a.txt, kl_kappa.txt and
/// kl_decay.csv (field,k,mu,sqrt_mu).
inline KLRunResult run_kl(const StudyConfig& config) {
  if (config.mode != FieldMode::lognormal) throw ValidationError("kl requires mode=lognormal");
  const Mesh mesh = config.structured_mesh
                        ? generate_structured(config.mesh_length, config.mesh_cells)
                        : load_mesh(config.mesh_path);
  const std::size_t modes = config.kl_mode_count();
  if (modes + config.kl_oversample > mesh.num_nodes()) {
    throw ValidationError("kl modes + oversample (" + std::to_string(modes + config.kl_oversample) +
                          ") exceed the node count " + std::to_string(mesh.num_nodes()));
  }
  KLRunResult out;
  out.modes_a = compute_kl(mesh, calibrate_covariance(config.correlation_length, config.variance_a),
                           modes, config.kl_oversample, config.kl_seed,
                           config.kl_power_iterations);
  out.modes_kappa =
      compute_kl(mesh, calibrate_covariance(config.correlation_length, config.variance_kappa),
                 modes, config.kl_oversample, config.kl_seed, config.kl_power_iterations);
  out.orthonormality_error = std::max(m_orthonormality_error(out.modes_a, mesh),
                                      m_orthonormality_error(out.modes_kappa, mesh));
  if (modes >= 2) {
    out.decay_slope_a = spectral_decay_slope(out.modes_a.eigenvalues);
    out.decay_slope_kappa = spectral_decay_slope(out.modes_kappa.eigenvalues);
  }
  const std::filesystem::path dir = config.output_dir;
  std::filesystem::create_directories(dir);
  save_kl_cache((dir / "kl_a.txt").string(), out.modes_a);
  save_kl_cache((dir / "kl_kappa.txt").string(), out.modes_kappa);
  std::string csv = "field,k,mu,sqrt_mu\n";
  for (const auto& [name, m] : {std::pair{"a", &out.modes_a}, std::pair{"kappa", &out.modes_kappa}}) {
    for (Eigen::Index k = 0; k < m->eigenvalues.size(); ++k) {
      csv += std::string(name) + "," + std::to_string(k + 1) + "," +
             detail::format_double(m->eigenvalues[k]) + "," +
             detail::format_double(std::sqrt(m->eigenvalues[k])) + "\n";
    }
  }
  detail::write_file(dir / "kl_decay.csv", csv);
  return out;
}

// ---------------------------------------------------------------------------

/// Writes generating_vector.txt and cbc_report.csv (j,z_j,wce).
inline CbcResult run_cbc(const StudyConfig& config) {
  const std::size_t s = config.cbc_s.value_or(config.s);
  const auto w = product_weights(s, config.weight_decay);
  CbcResult res;
  if (config.cbc_embedded) {
    if (config.cbc_n) throw ValidationError("cbc.n is implied by qmc.m_max in embedded mode");
    res = cbc_construct_embedded(config.m_min, config.m_max, s, w);
  } else {
    const std::uint64_t n = config.cbc_n.value_or(std::uint64_t{1} << config.m_max);
    if (!is_prime_power(n)) throw ValidationError("cbc.n must be a prime power");
    res = cbc_construct_traced(n, s, w);
  }
  const std::filesystem::path dir = config.output_dir;
  std::filesystem::create_directories(dir);
  std::ostringstream vec;
  write_generating_vector(vec, res.z);
  detail::write_file(dir / "generating_vector.txt", vec.str());
  std::string report = "j,z,wce\n";
  for (std::size_t j = 0; j < res.z.size(); ++j) {
    report += std::to_string(j + 1) + "," + std::to_string(res.z[j]) + "," +
              detail::format_double(res.wce_per_dimension[j]) + "\n";
  }
  detail::write_file(dir / "cbc_report.csv", report);
  return res;
}

} // namespace qmctumor

#endif
