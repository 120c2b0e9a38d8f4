#ifndef QMCTUMOR_LATTICE_HPP
#define QMCTUMOR_LATTICE_HPP

// Randomly shifted rank-1 lattice rules.
//
// Point i of shift r is frac(i z / N + Delta_r). Worst-case errors are the
// shift-averaged ones of the weighted unanchored Sobolev space of first order,
//
//   e^2(z) = -1 + 1/N sum_k sum_u gamma_u prod_{j in u} B2(frac(k z_j / N)),
//
// with B2(x) = x^2 - x + 1/6. Product weights and POD weights (order weight
// Gamma_|u| times a product) are both supported.

#include <qmctumor/errors.hpp>
#include <qmctumor/normal.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace qmctumor {

// ---------------------------------------------------------------------------
// Counter-based reproducible randomness

/// Uniform stream keyed by (seed, stream, index): any element can be
/// regenerated in isolation, independent of evaluation order.
class KeyedRng {
public:
  KeyedRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    engine_.seed(seq);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

private:
  std::mt19937_64 engine_;
};

inline constexpr std::uint64_t kShiftStream = 1;
inline constexpr std::uint64_t kMonteCarloStream = 2;

// ---------------------------------------------------------------------------
// Number theory helpers

inline std::uint64_t euler_totient(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("euler_totient: n must be positive");
  if (n == 1) return 0; // no z in [1, N-1]
  std::uint64_t result = n;
  std::uint64_t m = n;
  for (std::uint64_t p = 2; p * p <= m; ++p) {
    if (m % p == 0) {
      while (m % p == 0) m /= p;
      result -= result / p;
    }
  }
  if (m > 1) result -= result / m;
  return result;
}

/// True when n = p^k for a prime p and k >= 1.
inline bool is_prime_power(std::uint64_t n) {
  if (n < 2) return false;
  std::uint64_t p = 2;
  while (p * p <= n && n % p != 0) ++p;
  if (p * p > n) return true; // n itself is prime
  while (n % p == 0) n /= p;
  return n == 1;
}

/// |1/2 (1/2 - 1) ... (1/2 - n + 1)|, with value 1 at n = 0.
inline double falling_factorial_half(unsigned n) {
  double v = 1.0;
  for (unsigned k = 0; k < n; ++k) v *= std::abs(0.5 - static_cast<double>(k));
  return v;
}

// ---------------------------------------------------------------------------
// Weights

struct WeightSequence {
  enum class Kind { product, pod };
  Kind kind = Kind::product;
  std::vector<double> gamma;       // per-coordinate factors gamma_j, j = 1..s
  std::vector<double> order;       // Gamma_l, l = 0..max_order (POD only)

  std::size_t dimension() const noexcept { return gamma.size(); }

  /// Order weight Gamma_l; 1 for product weights, 0 beyond the stored order.
  double order_weight(std::size_t l) const {
    if (kind == Kind::product) return 1.0;
    return l < order.size() ? order[l] : 0.0;
  }

  /// gamma_u for a set of 1-based coordinates.
  double weight(std::span<const int> subset) const {
    double w = order_weight(subset.size());
    for (int j : subset) w *= gamma.at(static_cast<std::size_t>(j - 1));
    return w;
  }

  void validate() const {
    for (double g : gamma) {
      if (!(g >= 0.0) || !std::isfinite(g)) throw InvalidArgument("weights must be nonnegative");
    }
    for (double g : order) {
      if (!(g >= 0.0) || !std::isfinite(g)) throw InvalidArgument("weights must be nonnegative");
    }
  }
};

/// gamma_j = c j^{-decay}.
inline WeightSequence product_weights(std::size_t s, double decay = 2.0, double c = 1.0) {
  WeightSequence w;
  w.gamma.resize(s);
  for (std::size_t j = 0; j < s; ++j) w.gamma[j] = c * std::pow(static_cast<double>(j + 1), -decay);
  return w;
}

/// POD weights minimizing the QMC error bound constant for a given lambda:
/// gamma_u = ([1/2]_|u| prod_j rho beta_j / sqrt(2 zeta(2 lambda) / (2 pi^2)^lambda))^{2/(1+lambda)}.
inline WeightSequence pod_weights(double lambda_q, std::span<const double> rho_beta,
                                  std::size_t max_order) {
  if (!(lambda_q > 0.5 && lambda_q <= 1.0)) {
    throw InvalidArgument("pod_weights: lambda must lie in (1/2, 1]");
  }
  const double exponent = 2.0 / (1.0 + lambda_q);
  const double denom = std::sqrt(2.0 * std::riemann_zeta(2.0 * lambda_q) /
                                 std::pow(2.0 * std::numbers::pi * std::numbers::pi, lambda_q));
  WeightSequence w;
  w.kind = WeightSequence::Kind::pod;
  w.gamma.reserve(rho_beta.size());
  for (double rb : rho_beta) {
    if (!(rb > 0.0)) throw InvalidArgument("pod_weights: rho*beta_j must be positive");
    w.gamma.push_back(std::pow(rb / denom, exponent));
  }
  w.order.resize(max_order + 1);
  for (std::size_t l = 0; l <= max_order; ++l) {
    w.order[l] = std::pow(falling_factorial_half(static_cast<unsigned>(l)), exponent);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Worst-case error and CBC

namespace detail {

inline double bernoulli2(double x) { return x * x - x + 1.0 / 6.0; }

inline std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * b) % n);
}

// Per-point accumulator for the order-dependent sums
//   p_l(k) = sum_{|u| = l, u in 1..d} prod_{j in u} gamma_j B2(k z_j / N).
// Product weights collapse to a single running product, stored minus one so
// that e^2 is a plain mean rather than a difference of O(1) numbers.
class WceState {
public:
  WceState(const WeightSequence& w, std::uint64_t n) : weights_(&w), n_(n) {
    if (w.kind == WeightSequence::Kind::product) {
      prod_.assign(n, 0.0);
    } else {
      sums_.assign(1, std::vector<double>(n, 1.0));
    }
  }

  std::uint64_t points() const noexcept { return n_; }

  /// e^2 after appending coordinate j (0-based) with component z, evaluated
  /// on the points k = stride * i, i = 0..n/stride - 1.
  double trial(std::size_t j, std::uint64_t z, std::uint64_t stride = 1) const {
    const double g = weights_->gamma[j];
    const std::uint64_t count = n_ / stride;
    double total = 0.0;
    if (weights_->kind == WeightSequence::Kind::product) {
      for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t k = i * stride;
        const double x = static_cast<double>(mulmod(k, z, n_)) / static_cast<double>(n_);
        total += prod_[k] + (1.0 + prod_[k]) * g * bernoulli2(x);
      }
      return total / static_cast<double>(count);
    }
    const std::size_t d = sums_.size(); // orders 0..d-1 present
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint64_t k = i * stride;
      const double omega =
          g * bernoulli2(static_cast<double>(mulmod(k, z, n_)) / static_cast<double>(n_));
      double acc = 0.0;
      for (std::size_t l = 1; l <= d; ++l) {
        const double p_new = (l < d ? sums_[l][k] : 0.0) + omega * sums_[l - 1][k];
        acc += weights_->order_weight(l) * p_new;
      }
      total += acc;
    }
    return total / static_cast<double>(count);
  }

  void append(std::size_t j, std::uint64_t z) {
    const double g = weights_->gamma[j];
    if (weights_->kind == WeightSequence::Kind::product) {
      for (std::uint64_t k = 0; k < n_; ++k) {
        const double x = static_cast<double>(mulmod(k, z, n_)) / static_cast<double>(n_);
        prod_[k] += (1.0 + prod_[k]) * g * bernoulli2(x);
      }
      return;
    }
    sums_.emplace_back(n_, 0.0);
    const std::size_t d = sums_.size() - 1;
    for (std::uint64_t k = 0; k < n_; ++k) {
      const double omega =
          g * bernoulli2(static_cast<double>(mulmod(k, z, n_)) / static_cast<double>(n_));
      for (std::size_t l = d; l >= 1; --l) sums_[l][k] += omega * sums_[l - 1][k];
    }
  }

private:
  const WeightSequence* weights_;
  std::uint64_t n_;
  std::vector<double> prod_; // prod_j (1 + gamma_j B2) - 1
  std::vector<std::vector<double>> sums_;
};

inline std::vector<std::uint64_t> coprime_candidates(std::uint64_t n) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t z = 1; z < n; ++z) {
    if (std::gcd(z, n) == 1) out.push_back(z);
  }
  if (out.empty()) out.push_back(1); // n = 1 or 2 edge cases
  return out;
}

} // namespace detail

/// Shift-averaged worst-case error of the lattice rule (z, N).
inline double wce(std::span<const std::uint64_t> z, std::uint64_t n,
                  const WeightSequence& weights) {
  if (n < 1) throw InvalidArgument("wce: N must be positive");
  if (weights.dimension() < z.size()) throw InvalidArgument("wce: too few weights");
  if (z.empty()) return 0.0;
  detail::WceState state(weights, n);
  for (std::size_t j = 0; j + 1 < z.size(); ++j) state.append(j, z[j]);
  const double e2 = state.trial(z.size() - 1, z.back());
  return std::sqrt(std::max(e2, 0.0));
}

struct CbcResult {
  std::vector<std::uint64_t> z;
  std::vector<double> wce_per_dimension; // e after each component
};

/// Component-by-component construction: each z_j minimizes e^2 given the
/// previous components; ties (up to rounding) go to the smallest candidate.
inline CbcResult cbc_construct_traced(std::uint64_t n, std::size_t s,
                                      const WeightSequence& weights) {
  if (!is_prime_power(n)) throw InvalidArgument("cbc: N must be a prime power");
  if (s < 1) throw InvalidArgument("cbc: dimension must be >= 1");
  if (weights.dimension() < s) throw InvalidArgument("cbc: too few weights");
  weights.validate();
  const auto candidates = detail::coprime_candidates(n);
  detail::WceState state(weights, n);
  CbcResult out;
  for (std::size_t j = 0; j < s; ++j) {
    std::uint64_t best = candidates.front();
    double best_e2 = std::numeric_limits<double>::infinity();
    // every unit gives the same one-dimensional point set
    const std::size_t n_trials = j == 0 ? 1 : candidates.size();
    for (std::size_t c = 0; c < n_trials; ++c) {
      const std::uint64_t z = candidates[c];
      const double e2 = state.trial(j, z);
      if (e2 < best_e2 * (1.0 - 1e-12)) {
        best_e2 = e2;
        best = z;
      }
    }
    state.append(j, best);
    out.z.push_back(best);
    out.wce_per_dimension.push_back(std::sqrt(std::max(best_e2, 0.0)));
  }
  return out;
}

inline std::vector<std::uint64_t> cbc_construct(std::uint64_t n, std::size_t s,
                                                const WeightSequence& weights) {
  return cbc_construct_traced(n, s, weights).z;
}

/// Embedded CBC for the ladder N = 2^m, m_min..m_max: each component
/// minimizes max_m e_m^2(z) / min_z' e_m^2(z'), so every level is near its
/// own CBC optimum while sharing one generating vector.
inline CbcResult cbc_construct_embedded(unsigned m_min, unsigned m_max, std::size_t s,
                                        const WeightSequence& weights) {
  if (m_min > m_max || m_max > 30) throw InvalidArgument("cbc: invalid level range");
  if (s < 1) throw InvalidArgument("cbc: dimension must be >= 1");
  if (weights.dimension() < s) throw InvalidArgument("cbc: too few weights");
  weights.validate();
  const std::uint64_t n = std::uint64_t{1} << m_max;
  std::vector<std::uint64_t> candidates;
  for (std::uint64_t z = 1; z < std::max<std::uint64_t>(n, 2); z += 2) candidates.push_back(z);
  const unsigned levels = m_max - m_min + 1;
  detail::WceState state(weights, n);
  CbcResult out;
  std::vector<double> e2(candidates.size() * levels);
  for (std::size_t j = 0; j < s; ++j) {
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      for (unsigned l = 0; l < levels; ++l) {
        const std::uint64_t stride = std::uint64_t{1} << (m_max - (m_min + l));
        e2[c * levels + l] = state.trial(j, candidates[c], stride);
      }
    }
    std::vector<double> level_min(levels, std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      for (unsigned l = 0; l < levels; ++l) {
        level_min[l] = std::min(level_min[l], e2[c * levels + l]);
      }
    }
    std::size_t best = 0;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < (j == 0 ? 1 : candidates.size()); ++c) {
      double ratio = 0.0;
      for (unsigned l = 0; l < levels; ++l) {
        const double denom = level_min[l] > 0.0 ? level_min[l] : 1.0;
        ratio = std::max(ratio, e2[c * levels + l] / denom);
      }
      if (ratio < best_ratio * (1.0 - 1e-12)) {
        best_ratio = ratio;
        best = c;
      }
    }
    state.append(j, candidates[best]);
    out.z.push_back(candidates[best]);
    out.wce_per_dimension.push_back(std::sqrt(std::max(e2[best * levels + levels - 1], 0.0)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lattice rules and points

enum class PointTarget { uniform_cube, centered_cube, gaussian };

/// Number of zero coordinates remapped before Phi^{-1}.
inline std::atomic<std::uint64_t>& gaussian_zero_guard_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

class LatticeRule {
public:
  LatticeRule(std::vector<std::uint64_t> z, std::uint64_t n, std::size_t n_shifts,
              std::uint64_t seed)
      : z_(std::move(z)), n_(n), seed_(seed) {
    if (n_ < 1) throw InvalidArgument("lattice rule needs N >= 1");
    if (z_.empty()) throw InvalidArgument("lattice rule needs a nonempty generating vector");
    for (auto& zj : z_) {
      if (zj == 0) throw InvalidArgument("generating vector entries must be positive");
    }
    if (n_ > 1 && is_prime_power(n_)) {
      for (auto zj : z_) {
        if (std::gcd(zj % n_, n_) != 1) {
          throw InvalidArgument("generating vector entry " + std::to_string(zj) +
                                " is not coprime with N");
        }
      }
    }
    shifts_.reserve(n_shifts);
    for (std::size_t r = 0; r < n_shifts; ++r) shifts_.push_back(make_shift(seed_, r, z_.size()));
  }

  /// Rule with explicitly given shifts (used by tests).
  LatticeRule(std::vector<std::uint64_t> z, std::uint64_t n,
              std::vector<std::vector<double>> shifts)
      : LatticeRule(std::move(z), n, 0, 0) {
    for (const auto& d : shifts) {
      if (d.size() != z_.size()) throw InvalidArgument("shift dimension mismatch");
      for (double v : d) {
        if (!(v >= 0.0 && v < 1.0)) throw InvalidArgument("shift entries must lie in [0, 1)");
      }
    }
    shifts_ = std::move(shifts);
  }

  /// Shift r drawn from the keyed stream (seed, r).
  static std::vector<double> make_shift(std::uint64_t seed, std::size_t r, std::size_t s) {
    KeyedRng rng(seed, kShiftStream, r);
    std::vector<double> d(s);
    for (auto& v : d) v = rng.uniform();
    return d;
  }

  const std::vector<std::uint64_t>& generating_vector() const noexcept { return z_; }
  std::uint64_t num_points() const noexcept { return n_; }
  std::size_t num_shifts() const noexcept { return shifts_.size(); }
  std::size_t dimension() const noexcept { return z_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<double>& shift(std::size_t r) const { return shifts_.at(r); }

  /// Writes point i (1..N) of shift r into `out` (length s).
  void point(std::uint64_t i, std::size_t r, PointTarget target, std::span<double> out) const {
    if (i < 1 || i > n_) throw InvalidArgument("lattice point index out of range");
    const auto& delta = shifts_.at(r);
    for (std::size_t j = 0; j < z_.size(); ++j) {
      double x = static_cast<double>(detail::mulmod(i % n_, z_[j] % n_, n_)) /
                     static_cast<double>(n_) +
                 delta[j];
      if (x >= 1.0) x -= 1.0;
      switch (target) {
      case PointTarget::uniform_cube:
        out[j] = x;
        break;
      case PointTarget::centered_cube:
        out[j] = x - 0.5;
        break;
      case PointTarget::gaussian:
        if (x == 0.0) {
          x = 0x1.0p-64;
          gaussian_zero_guard_count().fetch_add(1, std::memory_order_relaxed);
        }
        out[j] = inverse_normal_cdf(x);
        break;
      }
    }
  }

  std::vector<double> point(std::uint64_t i, std::size_t r, PointTarget target) const {
    std::vector<double> out(z_.size());
    point(i, r, target, out);
    return out;
  }

private:
  std::vector<std::uint64_t> z_;
  std::uint64_t n_;
  std::uint64_t seed_;
  std::vector<std::vector<double>> shifts_;
};

inline std::vector<double> lattice_point(const LatticeRule& rule, std::uint64_t i, std::size_t r,
                                         PointTarget target) {
  return rule.point(i, r, target);
}

// ---------------------------------------------------------------------------
// Generating vector files

/// 64-bit FNV-1a, used to fingerprint inputs in run metadata.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct GeneratingVectorFile {
  std::vector<std::uint64_t> z;
  std::uint64_t hash = 0; // FNV-1a of the file bytes
};

/// Reads one positive integer per line ('#' comments and blank lines
/// allowed) and returns the first s entries.
inline GeneratingVectorFile load_generating_vector(const std::string& path, std::size_t s) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open generating vector file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  GeneratingVectorFile out;
  out.hash = fnv1a64(bytes);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= bytes.size() && out.z.size() < s) {
    const auto eol = bytes.find('\n', pos);
    std::string line = bytes.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? bytes.size() + 1 : eol + 1;
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string token = line.substr(first, last - first + 1);
    std::uint64_t v = 0;
    bool ok = !token.empty();
    for (char c : token) {
      if (c < '0' || c > '9') {
        ok = false;
        break;
      }
      v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    if (!ok || v == 0) throw FormatError("generating vector entry '" + token + "'", line_no);
    out.z.push_back(v);
  }
  if (out.z.size() < s) {
    throw ValidationError("generating vector file '" + path + "' has " +
                          std::to_string(out.z.size()) + " entries, need " + std::to_string(s));
  }
  return out;
}

inline void write_generating_vector(std::ostream& out, std::span<const std::uint64_t> z) {
  for (auto v : z) out << v << '\n';
}

} // namespace qmctumor

#endif
