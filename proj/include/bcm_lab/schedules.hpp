#pragma once

// Noise-scale ladders, the training curriculum N(k), the index pmf p(n),
// index-pair sampling and loss reweighting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bcm_lab/rng.hpp"

namespace bcm {

struct TimeGrid {
  double t_min = 0.0;
  double t_max = 0.0;
  double rho = 0.0;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

/// t_n = (t_min^(1/rho) + (n-1)/(N-1) * (t_max^(1/rho) - t_min^(1/rho)))^rho for n = 1..N.
/// Endpoints are pinned to t_min and t_max exactly.
inline TimeGrid build_grid(double t_min, double t_max, int n_steps, double rho) {
  if (!(t_min > 0.0)) throw std::invalid_argument("build_grid: t_min must be > 0");
  if (!(t_max > t_min)) throw std::invalid_argument("build_grid: t_max must exceed t_min");
  if (n_steps < 2) throw std::invalid_argument("build_grid: n_steps must be >= 2");
  if (!(rho > 0.0)) throw std::invalid_argument("build_grid: rho must be > 0");

  TimeGrid grid{t_min, t_max, rho, std::vector<double>(static_cast<std::size_t>(n_steps))};
  const double lo = std::pow(t_min, 1.0 / rho);
  const double hi = std::pow(t_max, 1.0 / rho);
  const double last = static_cast<double>(n_steps - 1);
  for (int i = 0; i < n_steps; ++i)
    grid.values[static_cast<std::size_t>(i)] = std::pow(lo + (i / last) * (hi - lo), rho);
  grid.values.front() = t_min;
  grid.values.back() = t_max;
  return grid;
}

struct StepSchedule {
  int s0 = 10;
  int s1 = 1280;
  std::int64_t total_iters = 0;

  /// K' = floor(K / (log2(s1/s0) + 1)), at least 1.
  std::int64_t doubling_period() const {
    const double stages = std::log2(static_cast<double>(s1) / s0) + 1.0;
    const auto kp = static_cast<std::int64_t>(std::floor(static_cast<double>(total_iters) / stages));
    return std::max<std::int64_t>(kp, 1);
  }
};

/// N(k) = min(s0 * 2^floor(k/K'), s1) + 1.
inline int step_count(std::int64_t k, const StepSchedule& sched) {
  if (sched.s0 < 1 || sched.s1 < sched.s0)
    throw std::invalid_argument("step_count: need 1 <= s0 <= s1");
  if (k < 0 || k >= sched.total_iters)
    throw std::invalid_argument("step_count: iteration out of range");
  const std::int64_t doublings = k / sched.doubling_period();
  std::int64_t n = sched.s0;
  for (std::int64_t i = 0; i < doublings && n < sched.s1; ++i) n *= 2;
  return static_cast<int>(std::min<std::int64_t>(n, sched.s1)) + 1;
}

/// Distribution over interval indices n = 1..N-1, stored zero-based.
struct NoisePmf {
  double p_mean = -1.1;
  double p_std = 2.0;
  std::vector<double> probs;
  std::vector<double> cdf;  // cdf[i] = probs[0] + ... + probs[i]

  std::size_t size() const noexcept { return probs.size(); }
};

namespace detail {

// erf(b) - erf(a) for a <= b, switching to erfc on the positive tail where the
// plain difference cancels.
inline double erf_diff(double a, double b) {
  if (a >= 0.0) return std::erfc(a) - std::erfc(b);
  if (b <= 0.0) return std::erfc(-b) - std::erfc(-a);
  return std::erf(b) - std::erf(a);
}

inline NoisePmf finish_pmf(NoisePmf pmf) {
  double total = 0.0;
  for (double p : pmf.probs) total += p;
  if (!(total > 0.0)) throw std::invalid_argument("noise pmf has no mass");
  pmf.cdf.resize(pmf.probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pmf.probs.size(); ++i) {
    pmf.probs[i] /= total;
    acc += pmf.probs[i];
    pmf.cdf[i] = acc;
  }
  return pmf;
}

}  // namespace detail

/// p(n) proportional to erf((log t_{n+1} - P_mean) / (sqrt(2) P_std)) - erf((log t_n - P_mean) / (sqrt(2) P_std)).
inline NoisePmf noise_pmf(const TimeGrid& grid, double p_mean = -1.1, double p_std = 2.0) {
  if (grid.size() < 2) throw std::invalid_argument("noise_pmf: grid needs >= 2 values");
  if (!(p_std > 0.0)) throw std::invalid_argument("noise_pmf: P_std must be > 0");
  NoisePmf pmf;
  pmf.p_mean = p_mean;
  pmf.p_std = p_std;
  pmf.probs.resize(grid.size() - 1);
  const double scale = 1.0 / (std::sqrt(2.0) * p_std);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double a = (std::log(grid[i]) - p_mean) * scale;
    const double b = (std::log(grid[i + 1]) - p_mean) * scale;
    pmf.probs[i] = std::max(0.0, detail::erf_diff(a, b));
  }
  return detail::finish_pmf(std::move(pmf));
}

/// Wraps explicit probabilities (normalized here). Used for tests and custom schedules.
inline NoisePmf pmf_from_weights(std::vector<double> weights) {
  for (double w : weights)
    if (!(w >= 0.0)) throw std::invalid_argument("pmf weights must be nonnegative");
  NoisePmf pmf;
  pmf.probs = std::move(weights);
  return detail::finish_pmf(std::move(pmf));
}

namespace detail {

inline std::size_t search_cdf(const std::vector<double>& cdf, double v) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), v);
  return it == cdf.end() ? cdf.size() - 1 : static_cast<std::size_t>(it - cdf.begin());
}

}  // namespace detail

struct IndexPair {
  int n = 0;        // 1-based interval index
  int n_prime = 0;  // 1-based, never equal to n
};

/// Draws n ~ p and n' ~ p restricted to n' != n.
inline IndexPair sample_index_pair(const NoisePmf& pmf, Rng& rng) {
  const std::size_t m = pmf.size();
  std::size_t nonzero = 0;
  for (double p : pmf.probs) nonzero += p > 0.0 ? 1 : 0;
  if (nonzero < 2) throw std::invalid_argument("sample_index_pair: pmf needs two nonzero entries");

  std::size_t n = detail::search_cdf(pmf.cdf, rng.uniform() * pmf.cdf.back());
  while (pmf.probs[n] == 0.0) n = (n + 1) % m;

  // Inverse-CDF on the distribution with the mass of n cut out.
  const double before = n == 0 ? 0.0 : pmf.cdf[n - 1];
  const double rest = pmf.cdf.back() - pmf.probs[n];
  double v = rng.uniform() * rest;
  if (v >= before) v += pmf.probs[n];
  std::size_t np = detail::search_cdf(pmf.cdf, v);
  while (np == n || pmf.probs[np] == 0.0) np = (np + 1) % m;
  return {static_cast<int>(n) + 1, static_cast<int>(np) + 1};
}

/// 1 / |t_a - t_b|; serves both lambda(t_n) and lambda'(t_n, t_n').
inline double weights(double t_a, double t_b) {
  if (t_a == t_b) throw std::invalid_argument("weights: equal noise scales");
  return 1.0 / std::abs(t_a - t_b);
}

/// Joint pmf of (n, n'): p(n) * p(n') / (1 - p(n)) off the diagonal.
struct CoveragePmf {
  std::vector<double> times;  // t_1..t_{N-1}
  std::vector<double> joint;  // row-major (N-1) x (N-1)

  std::size_t dim() const noexcept { return times.size(); }
  double operator()(std::size_t n, std::size_t np) const { return joint[n * dim() + np]; }
};

inline CoveragePmf pair_coverage_pmf(const TimeGrid& grid, const NoisePmf& pmf) {
  const std::size_t m = pmf.size();
  if (grid.size() != m + 1) throw std::invalid_argument("pair_coverage_pmf: grid/pmf size mismatch");
  CoveragePmf cov;
  cov.times.assign(grid.values.begin(), grid.values.end() - 1);
  cov.joint.assign(m * m, 0.0);
  for (std::size_t n = 0; n < m; ++n) {
    const double rest = 1.0 - pmf.probs[n];
    if (!(rest > 0.0)) continue;
    for (std::size_t np = 0; np < m; ++np)
      if (np != n) cov.joint[n * m + np] = pmf.probs[n] * pmf.probs[np] / rest;
  }
  return cov;
}

/// CSV with header n,n_prime,t_n,t_n_prime,prob (1-based indices).
inline void write_coverage_csv(std::ostream& os, const CoveragePmf& cov) {
  os << "n,n_prime,t_n,t_n_prime,prob\n";
  os.precision(17);
  for (std::size_t n = 0; n < cov.dim(); ++n)
    for (std::size_t np = 0; np < cov.dim(); ++np)
      os << n + 1 << ',' << np + 1 << ',' << cov.times[n] << ',' << cov.times[np] << ','
         << cov(n, np) << '\n';
}

}  // namespace bcm
