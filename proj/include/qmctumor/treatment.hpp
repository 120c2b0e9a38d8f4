#ifndef QMCTUMOR_TREATMENT_HPP
#define QMCTUMOR_TREATMENT_HPP

// Chemoradiation forcing f(x, t) = f_rt + f_ct.
//
// Radiotherapy uses the linear-quadratic survival model; each dose acts over
// one time step (tau, tau + dt] with magnitude gamma_scale, so the integrated
// kill fraction per dose is gamma_scale * dt * (1 - SF). Chemotherapy decays
// exponentially after each administration.

#include <qmctumor/errors.hpp>
#include <qmctumor/mesh.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace qmctumor {

/// Spatial dose or concentration map. Constant maps are recognised so the
/// solver can skip per-step reassembly.
class SpatialMap {
public:
  SpatialMap(double constant = 0.0) : constant_(constant) {} // NOLINT(implicit)
  explicit SpatialMap(std::function<double(Point)> f) : fn_(std::move(f)) {}

  double operator()(Point x) const { return fn_ ? fn_(x) : constant_; }
  bool is_constant() const noexcept { return !fn_; }
  std::optional<double> constant() const {
    return fn_ ? std::nullopt : std::optional<double>(constant_);
  }

private:
  double constant_ = 0.0;
  std::function<double(Point)> fn_;
};

struct RadiotherapySchedule {
  std::vector<double> times;        // days
  SpatialMap dose = 0.0;            // Gy
  double alpha = 0.025;             // 1/Gy
  double beta = 0.0025;             // 1/Gy^2
  double gamma_scale = 8.0;         // 1/day, normally 1/dt
  /// Supremum of the dose map over the domain, needed for f_max.
  std::optional<double> dose_sup;
};

struct ChemotherapySchedule {
  std::vector<double> times;        // days
  SpatialMap concentration = 0.0;
  double alpha = 0.9;               // efficacy
  double beta = 24.0 / 1.8;         // clearance, 1/day
  std::optional<double> concentration_sup;
};

namespace detail {
inline void check_sorted(const std::vector<double>& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw InvalidArgument(std::string(what) + " times must be finite");
    if (i > 0 && t[i] < t[i - 1]) {
      throw InvalidArgument(std::string(what) + " times must be sorted ascending");
    }
  }
}
} // namespace detail

/// Validated pair of schedules.
class Treatment {
public:
  Treatment() = default;
  Treatment(RadiotherapySchedule rt, ChemotherapySchedule ct)
      : rt_(std::move(rt)), ct_(std::move(ct)) {
    detail::check_sorted(rt_.times, "radiotherapy");
    detail::check_sorted(ct_.times, "chemotherapy");
    if (!(rt_.alpha > 0.0) || !(rt_.beta > 0.0)) {
      throw InvalidArgument("radiotherapy alpha and beta must be positive");
    }
    if (!(ct_.alpha > 0.0) || !(ct_.beta > 0.0)) {
      throw InvalidArgument("chemotherapy alpha and beta must be positive");
    }
    if (!(rt_.gamma_scale >= 0.0)) throw InvalidArgument("radiotherapy gamma must be >= 0");
    auto sup = [](const SpatialMap& m, const std::optional<double>& given, const char* what) {
      const auto v = given ? given : m.constant();
      if (!v) {
        throw InvalidArgument(std::string(what) +
                              " map is not constant; its supremum must be given");
      }
      if (!(*v >= 0.0)) throw InvalidArgument(std::string(what) + " must be nonnegative");
      return *v;
    };
    if (!rt_.times.empty()) rt_.dose_sup = sup(rt_.dose, rt_.dose_sup, "radiotherapy dose");
    if (!ct_.times.empty()) {
      ct_.concentration_sup = sup(ct_.concentration, ct_.concentration_sup, "chemo concentration");
    }
  }

  const RadiotherapySchedule& radiotherapy() const noexcept { return rt_; }
  const ChemotherapySchedule& chemotherapy() const noexcept { return ct_; }

  bool empty() const noexcept { return rt_.times.empty() && ct_.times.empty(); }
  bool is_spatially_uniform() const noexcept {
    return rt_.dose.is_constant() && ct_.concentration.is_constant();
  }

  double eval_rt(Point x, double t, double dt) const {
    double f = 0.0;
    for (double tau : rt_.times) {
      if (t > tau && t <= tau + dt) {
        const double z = rt_.dose(x);
        f += rt_.gamma_scale * (1.0 - std::exp(-rt_.alpha * z - rt_.beta * z * z));
      }
    }
    return f;
  }

  double eval_ct(Point x, double t) const {
    double f = 0.0;
    for (double tau : ct_.times) {
      if (t >= tau) f += ct_.concentration(x) * std::exp(-ct_.beta * (t - tau));
    }
    return ct_.alpha * f;
  }

  /// f(x, t); `dt` is the pulse width standing in for the instantaneous dose.
  double eval(Point x, double t, double dt) const { return eval_rt(x, t, dt) + eval_ct(x, t); }

  /// Upper bound of f over space and time: worst overlap of RT pulses plus
  /// every chemo dose at its peak.
  double f_max_bound(double dt) const {
    double rt_bound = 0.0;
    if (!rt_.times.empty()) {
      const double z = *rt_.dose_sup;
      const double kill = 1.0 - std::exp(-rt_.alpha * z - rt_.beta * z * z);
      for (double tau : rt_.times) {
        const auto overlapping = std::count_if(rt_.times.begin(), rt_.times.end(),
                                               [&](double o) { return std::abs(o - tau) < dt; });
        rt_bound = std::max(rt_bound, rt_.gamma_scale * kill * static_cast<double>(overlapping));
      }
    }
    double ct_bound = 0.0;
    if (!ct_.times.empty()) {
      ct_bound = ct_.alpha * *ct_.concentration_sup * static_cast<double>(ct_.times.size());
    }
    return rt_bound + ct_bound;
  }

private:
  RadiotherapySchedule rt_;
  ChemotherapySchedule ct_;
};

/// Convenience free function mirroring Treatment::eval.
inline double eval_f(Point x, double t, const Treatment& treatment, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("pulse width dt must be positive");
  return treatment.eval(x, t, dt);
}

inline double f_max_bound(const Treatment& treatment, double dt) {
  return treatment.f_max_bound(dt);
}

/// Chemoradiation protocol used by the reference experiments: 2 Gy RT on days
/// 0-4, unit chemo daily on days 0-6, alpha/beta = 10 Gy.
inline Treatment standard_protocol(double dt) {
  RadiotherapySchedule rt;
  rt.times = {0, 1, 2, 3, 4};
  rt.dose = 2.0;
  rt.alpha = 0.025;
  rt.beta = 0.025 / 10.0;
  rt.gamma_scale = 1.0 / dt;
  ChemotherapySchedule ct;
  ct.times = {0, 1, 2, 3, 4, 5, 6};
  ct.concentration = 1.0;
  ct.alpha = 0.9;
  ct.beta = 24.0 / 1.8;
  return Treatment(std::move(rt), std::move(ct));
}

} // namespace qmctumor

#endif
