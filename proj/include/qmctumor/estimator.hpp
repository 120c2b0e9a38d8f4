#ifndef QMCTUMOR_ESTIMATOR_HPP
#define QMCTUMOR_ESTIMATOR_HPP

// Randomly shifted QMC and plain MC estimators of E[G(y)].
//
// Evaluations may run on any number of threads, but every value lands in a
// slot fixed by its (shift, point) or sample index and all reductions run
// sequentially in ascending index order, so results are bit-identical for any
// worker count.

#include <qmctumor/errors.hpp>
#include <qmctumor/lattice.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace qmctumor {

/// Quantity of interest as a function of the parameter vector. Must be safe
/// to call concurrently.
using Integrand = std::function<double(std::span<const double>)>;

/// Evaluation failure tagged with the sample coordinates that caused it.
class SampleFailure : public NumericalError {
public:
  SampleFailure(const std::string& what, std::uint64_t point, std::size_t shift,
                std::vector<double> y)
      : NumericalError(what), point_(point), shift_(shift), y_(std::move(y)) {}
  std::uint64_t point() const noexcept { return point_; }
  std::size_t shift() const noexcept { return shift_; }
  const std::vector<double>& parameters() const noexcept { return y_; }

private:
  std::uint64_t point_;
  std::size_t shift_;
  std::vector<double> y_;
};

/// Runs body(k) for k in [0, count) on `workers` threads. If any call throws,
/// the exception of the smallest failing k is rethrown after all threads stop.
template <class Body>
void parallel_for(std::size_t count, unsigned workers, Body&& body) {
  workers = std::max(1u, workers);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> first_failure{count};
  std::mutex mutex;
  std::exception_ptr error;

  auto run = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1, std::memory_order_relaxed);
      // Indices below a known failure still run so the reported failure is
      // the smallest one regardless of scheduling.
      if (k >= count || k > first_failure.load()) return;
      try {
        body(k);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (k < first_failure.load()) {
          first_failure.store(k);
          error = std::current_exception();
        }
      }
    }
  };
  if (workers == 1 || count <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    const unsigned n = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    pool.reserve(n);
    for (unsigned w = 0; w < n; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

struct EstimatorResult {
  std::vector<double> per_shift_values; // Q_N^(r)
  double mean = 0.0;
  double rms_error = 0.0;
  std::uint64_t n_points = 0;
  std::size_t n_shifts = 0;
  double wall_seconds = 0.0;
};

namespace detail {

// Sum of squared deviations from the mean, computed on data shifted by the
// first value so that equal inputs give exactly zero.
inline double centered_sum_of_squares(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double ref = values.front();
  double sd = 0.0;
  for (double v : values) sd += v - ref;
  const double dbar = sd / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - ref - dbar) * (v - ref - dbar);
  return ss;
}

} // namespace detail

/// sqrt(1/(R(R-1)) sum_r (Q - Q_r)^2); zero for a single shift.
inline double shift_rms_error(std::span<const double> values) {
  const std::size_t r = values.size();
  if (r < 2) return 0.0;
  const double ss = detail::centered_sum_of_squares(values);
  return std::sqrt(ss / (static_cast<double>(r) * static_cast<double>(r - 1)));
}

inline EstimatorResult aggregate_shifts(std::vector<double> per_shift, std::uint64_t n_points) {
  EstimatorResult out;
  out.n_points = n_points;
  out.n_shifts = per_shift.size();
  double sum = 0.0;
  for (double q : per_shift) sum += q;
  out.mean = per_shift.empty() ? 0.0 : sum / static_cast<double>(per_shift.size());
  out.rms_error = shift_rms_error(per_shift);
  out.per_shift_values = std::move(per_shift);
  return out;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <class PointFn>
void evaluate_slots(std::size_t count, unsigned workers, const Integrand& g,
                    std::vector<double>& slots, PointFn&& make_point,
                    std::function<SampleFailure(std::size_t, const std::string&,
                                                std::vector<double>)> tag) {
  slots.assign(count, 0.0);
  parallel_for(count, workers, [&](std::size_t k) {
    std::vector<double> y = make_point(k);
    try {
      slots[k] = g(y);
      if (!std::isfinite(slots[k])) throw NumericalError("non-finite quantity of interest");
    } catch (const SampleFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw tag(k, e.what(), std::move(y));
    }
  });
}

} // namespace detail

/// One randomly shifted lattice rule estimate.
inline EstimatorResult qmc_estimate(const Integrand& g, const LatticeRule& rule,
                                    PointTarget target, unsigned workers = 1) {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t n = rule.num_points();
  const std::size_t shifts = rule.num_shifts();
  if (shifts < 1) throw InvalidArgument("qmc_estimate needs at least one shift");
  std::vector<double> slots;
  detail::evaluate_slots(
      static_cast<std::size_t>(n) * shifts, workers, g, slots,
      [&](std::size_t k) { return rule.point(k % n + 1, k / n, target); },
      [&](std::size_t k, const std::string& what, std::vector<double> y) {
        return SampleFailure("point i=" + std::to_string(k % n + 1) + " shift r=" +
                                 std::to_string(k / n) + ": " + what,
                             k % n + 1, k / n, std::move(y));
      });
  std::vector<double> per_shift(shifts);
  for (std::size_t r = 0; r < shifts; ++r) {
    double sum = 0.0;
    for (std::uint64_t i = 0; i < n; ++i) sum += slots[r * n + i];
    per_shift[r] = sum / static_cast<double>(n);
  }
  auto out = aggregate_shifts(std::move(per_shift), n);
  out.wall_seconds = detail::seconds_since(start);
  return out;
}

/// Estimates for the embedded ladder N = 2^m, m = m_min..m_max, sharing one
/// generating vector. Level m reuses the points i 2^(m_max - m) of the
/// largest rule, so only R 2^m_max integrand evaluations are made in total.
inline std::vector<EstimatorResult> qmc_ladder(const Integrand& g,
                                               const std::vector<std::uint64_t>& z,
                                               unsigned m_min, unsigned m_max,
                                               std::size_t n_shifts, std::uint64_t seed,
                                               PointTarget target, unsigned workers = 1) {
  if (m_min > m_max) throw InvalidArgument("qmc ladder: m_min exceeds m_max");
  if (m_max > 30) throw InvalidArgument("qmc ladder: m_max too large");
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t n_max = std::uint64_t{1} << m_max;
  const LatticeRule rule(z, n_max, n_shifts, seed);
  std::vector<double> slots;
  detail::evaluate_slots(
      static_cast<std::size_t>(n_max) * n_shifts, workers, g, slots,
      [&](std::size_t k) { return rule.point(k % n_max + 1, k / n_max, target); },
      [&](std::size_t k, const std::string& what, std::vector<double> y) {
        return SampleFailure("point i=" + std::to_string(k % n_max + 1) + " shift r=" +
                                 std::to_string(k / n_max) + ": " + what,
                             k % n_max + 1, k / n_max, std::move(y));
      });
  const double elapsed = detail::seconds_since(start);
  std::vector<EstimatorResult> levels;
  for (unsigned m = m_min; m <= m_max; ++m) {
    const std::uint64_t n = std::uint64_t{1} << m;
    const std::uint64_t stride = n_max / n;
    std::vector<double> per_shift(n_shifts);
    for (std::size_t r = 0; r < n_shifts; ++r) {
      double sum = 0.0;
      for (std::uint64_t i = 1; i <= n; ++i) sum += slots[r * n_max + (i * stride - 1)];
      per_shift[r] = sum / static_cast<double>(n);
    }
    auto res = aggregate_shifts(std::move(per_shift), n);
    res.wall_seconds = elapsed * static_cast<double>(n) / static_cast<double>(n_max);
    levels.push_back(std::move(res));
  }
  return levels;
}

struct MonteCarloResult {
  double mean = 0.0;
  double standard_error = 0.0;
  std::uint64_t n_samples = 0;
  double wall_seconds = 0.0;
};

/// Sample k of the i.i.d. stream: uniforms keyed by (seed, k), mapped to the
/// centered cube or to standard normals.
inline std::vector<double> monte_carlo_point(std::uint64_t seed, std::uint64_t k, std::size_t s,
                                             PointTarget target) {
  KeyedRng rng(seed, kMonteCarloStream, k);
  std::vector<double> y(s);
  for (auto& v : y) {
    double u = rng.uniform();
    switch (target) {
    case PointTarget::uniform_cube:
      v = u;
      break;
    case PointTarget::centered_cube:
      v = u - 0.5;
      break;
    case PointTarget::gaussian:
      if (u == 0.0) {
        u = 0x1.0p-64;
        gaussian_zero_guard_count().fetch_add(1, std::memory_order_relaxed);
      }
      v = inverse_normal_cdf(u);
      break;
    }
  }
  return y;
}

inline MonteCarloResult summarize_samples(std::span<const double> values) {
  MonteCarloResult out;
  out.n_samples = values.size();
  const double ref = values.front();
  double sd = 0.0;
  for (double v : values) sd += v - ref;
  out.mean = ref + sd / static_cast<double>(values.size());
  const double var =
      detail::centered_sum_of_squares(values) / static_cast<double>(values.size() - 1);
  out.standard_error = std::sqrt(var / static_cast<double>(values.size()));
  return out;
}

namespace detail {

inline void mc_evaluate(const Integrand& g, std::uint64_t n, std::size_t s, std::uint64_t seed,
                        PointTarget target, unsigned workers, std::vector<double>& slots) {
  evaluate_slots(
      static_cast<std::size_t>(n), workers, g, slots,
      [&](std::size_t k) { return monte_carlo_point(seed, k, s, target); },
      [&](std::size_t k, const std::string& what, std::vector<double> y) {
        return SampleFailure("MC sample " + std::to_string(k) + ": " + what, k, 0, std::move(y));
      });
}

} // namespace detail

inline MonteCarloResult mc_estimate(const Integrand& g, std::uint64_t n_samples, std::size_t s,
                                    std::uint64_t seed, PointTarget target,
                                    unsigned workers = 1) {
  if (n_samples < 2) throw InvalidArgument("mc_estimate needs at least two samples");
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> slots;
  detail::mc_evaluate(g, n_samples, s, seed, target, workers, slots);
  auto out = summarize_samples(slots);
  out.wall_seconds = detail::seconds_since(start);
  return out;
}

/// MC estimates on prefixes of one stream: level m uses the first R 2^m samples.
inline std::vector<MonteCarloResult> mc_ladder(const Integrand& g, std::size_t s,
                                               unsigned m_min, unsigned m_max,
                                               std::size_t n_shifts, std::uint64_t seed,
                                               PointTarget target, unsigned workers = 1) {
  if (m_min > m_max) throw InvalidArgument("mc ladder: m_min exceeds m_max");
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t n_max = (std::uint64_t{1} << m_max) * n_shifts;
  if (n_max < 2) throw InvalidArgument("mc ladder needs at least two samples");
  std::vector<double> slots;
  detail::mc_evaluate(g, n_max, s, seed, target, workers, slots);
  const double elapsed = detail::seconds_since(start);
  std::vector<MonteCarloResult> out;
  for (unsigned m = m_min; m <= m_max; ++m) {
    const std::uint64_t n = std::max<std::uint64_t>((std::uint64_t{1} << m) * n_shifts, 2);
    auto res = summarize_samples(std::span<const double>(slots.data(), n));
    res.wall_seconds = elapsed * static_cast<double>(n) / static_cast<double>(n_max);
    out.push_back(res);
  }
  return out;
}

/// Least-squares slope of log(error) against log(N).
inline double fit_rate(std::span<const std::pair<double, double>> levels) {
  if (levels.size() < 3) throw InvalidArgument("fit_rate needs at least three levels");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [n, err] : levels) {
    if (!(n > 0.0)) throw InvalidArgument("fit_rate: N must be positive");
    if (!(err > 0.0)) throw InvalidArgument("fit_rate: errors must be positive");
    const double x = std::log(n), y = std::log(err);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(levels.size());
  const double denom = k * sxx - sx * sx;
  if (!(denom > 1e-12 * k * sxx)) throw InvalidArgument("fit_rate: need at least two distinct N");
  return (k * sxy - sx * sy) / denom;
}

} // namespace qmctumor

#endif
