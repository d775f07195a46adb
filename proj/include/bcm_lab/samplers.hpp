#pragma once

// Generation from a consistency function model(x, t, u) -> x_u, applied to a
// batch with one sample per column. Every model call counts as one NFE.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcm_lab/rng.hpp"

namespace bcm {

using Matrix = Eigen::MatrixXd;

struct Trajectory {
  std::vector<double> times;
  std::vector<Matrix> states;
  int nfe = 0;

  const Matrix& final_state() const { return states.back(); }

  void push(double t, Matrix x) {
    times.push_back(t);
    states.push_back(std::move(x));
  }
};

enum class SamplerKind { one_step, ancestral, zigzag, combined };

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::one_step: return "one_step";
    case SamplerKind::ancestral: return "ancestral";
    case SamplerKind::zigzag: return "zigzag";
    case SamplerKind::combined: return "combined";
  }
  return "?";
}

inline SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "one_step") return SamplerKind::one_step;
  if (s == "ancestral") return SamplerKind::ancestral;
  if (s == "zigzag") return SamplerKind::zigzag;
  if (s == "combined") return SamplerKind::combined;
  throw std::invalid_argument("unknown sampler plan '" + s + "'");
}

/// ancestral_times: strictly decreasing, starting at T. For `ancestral` it
/// ends at 0; for `combined` it ends at the handoff scale t_1.
/// zigzag_times: strictly increasing tau_1 < ... < tau_M. For `zigzag`
/// tau_M = T; for `combined` tau_M equals the ancestral handoff.
/// fresh_noise_scales: eps_1 .. eps_{M-1} with eps_m < tau_m.
struct SamplerPlan {
  SamplerKind kind = SamplerKind::one_step;
  double t_max = 80.0;
  std::vector<double> ancestral_times;
  std::vector<double> zigzag_times;
  std::vector<double> fresh_noise_scales;
  std::uint64_t seed = 0;
};

namespace plans {

inline SamplerPlan one_step(double t_max = 80.0) { return {SamplerKind::one_step, t_max, {}, {}, {}, 0}; }

/// NFE 2: T -> 1.2 -> 0.
inline SamplerPlan ancestral(std::vector<double> times = {80.0, 1.2, 0.0}) {
  return {SamplerKind::ancestral, times.front(), std::move(times), {}, {}, 0};
}

/// NFE 3: tau = (0.8, T), eps_1 = 0.2.
inline SamplerPlan zigzag(std::vector<double> taus = {0.8, 80.0}, std::vector<double> eps = {0.2},
                          std::uint64_t seed = 0) {
  const double t = taus.back();
  return {SamplerKind::zigzag, t, {}, std::move(taus), std::move(eps), seed};
}

/// NFE 4: ancestral T -> 1.2, then zigzag tau = (0.3, 1.2), eps_1 = 0.1.
inline SamplerPlan combined(std::vector<double> ancestral_times = {80.0, 1.2},
                            std::vector<double> taus = {0.3, 1.2}, std::vector<double> eps = {0.1},
                            std::uint64_t seed = 0) {
  const double t = ancestral_times.front();
  return {SamplerKind::combined, t, std::move(ancestral_times), std::move(taus), std::move(eps), seed};
}

}  // namespace plans

namespace detail {

inline void require_decreasing(const std::vector<double>& v, const char* what) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) throw std::invalid_argument(std::string(what) + ": times must strictly decrease");
  for (double t : v)
    if (t < 0.0) throw std::invalid_argument(std::string(what) + ": negative time");
}

inline void require_zigzag(const std::vector<double>& taus, const std::vector<double>& eps) {
  if (taus.empty()) throw std::invalid_argument("zigzag: need at least one time");
  for (std::size_t i = 1; i < taus.size(); ++i)
    if (!(taus[i] > taus[i - 1])) throw std::invalid_argument("zigzag: times must strictly increase");
  if (!(taus.front() > 0.0)) throw std::invalid_argument("zigzag: times must be > 0");
  if (eps.size() + 1 != taus.size())
    throw std::invalid_argument("zigzag: need exactly one noise scale per amplification step");
  for (std::size_t m = 0; m < eps.size(); ++m)
    if (!(eps[m] >= 0.0) || !(eps[m] < taus[m]))
      throw std::invalid_argument("zigzag: each noise scale must satisfy 0 <= eps_m < tau_m");
}

/// Zigzag phase from x at tau_M: denoise, inject eps, amplify; then the final denoise.
template <typename Model>
void run_zigzag(const Model& f, const SamplerPlan& plan, Matrix x, Trajectory& traj) {
  const auto& taus = plan.zigzag_times;
  const auto& eps = plan.fresh_noise_scales;
  for (std::size_t m = taus.size() - 1; m >= 1; --m) {
    Matrix x0 = f(x, taus[m], 0.0);
    ++traj.nfe;
    traj.push(0.0, x0);
    const Matrix sigma = column_normals(x0.rows(), x0.cols(),
                                        mix_key(plan.seed, stream::zigzag, static_cast<std::uint64_t>(m)),
                                        stream::noise);
    Matrix x_eps = x0 + eps[m - 1] * sigma;
    traj.push(eps[m - 1], x_eps);
    x = f(x_eps, eps[m - 1], taus[m - 1]);
    ++traj.nfe;
    traj.push(taus[m - 1], x);
  }
  traj.push(0.0, f(x, taus.front(), 0.0));
  ++traj.nfe;
}

}  // namespace detail

/// f(x_T, T, 0).
template <typename Model>
Matrix one_step(const Model& f, const Matrix& x_T, double t_max = 80.0) {
  return f(x_T, t_max, 0.0);
}

/// x_{t_{n-1}} <- f(x_{t_n}, t_n, t_{n-1}) along plan.ancestral_times.
template <typename Model>
Trajectory ancestral(const Model& f, const SamplerPlan& plan, const Matrix& x_T) {
  if (plan.kind != SamplerKind::ancestral) throw std::invalid_argument("ancestral: wrong plan kind");
  const auto& ts = plan.ancestral_times;
  if (ts.size() < 2) throw std::invalid_argument("ancestral: need at least two times");
  detail::require_decreasing(ts, "ancestral");
  if (ts.back() != 0.0) throw std::invalid_argument("ancestral: times must end at 0");
  Trajectory traj;
  traj.push(ts.front(), x_T);
  for (std::size_t i = 1; i < ts.size(); ++i) {
    traj.push(ts[i], f(traj.states.back(), ts[i - 1], ts[i]));
    ++traj.nfe;
  }
  return traj;
}

template <typename Model>
Trajectory zigzag(const Model& f, const SamplerPlan& plan, const Matrix& x_T) {
  if (plan.kind != SamplerKind::zigzag) throw std::invalid_argument("zigzag: wrong plan kind");
  detail::require_zigzag(plan.zigzag_times, plan.fresh_noise_scales);
  Trajectory traj;
  traj.push(plan.zigzag_times.back(), x_T);
  detail::run_zigzag(f, plan, x_T, traj);
  return traj;
}

/// Ancestral steps down to t_1, then zigzag on tau_1 < ... < tau_M = t_1.
template <typename Model>
Trajectory combined(const Model& f, const SamplerPlan& plan, const Matrix& x_T) {
  if (plan.kind != SamplerKind::combined) throw std::invalid_argument("combined: wrong plan kind");
  const auto& ts = plan.ancestral_times;
  if (ts.empty()) throw std::invalid_argument("combined: empty ancestral phase");
  detail::require_decreasing(ts, "combined");
  if (!(ts.back() > 0.0)) throw std::invalid_argument("combined: handoff scale must be > 0");
  detail::require_zigzag(plan.zigzag_times, plan.fresh_noise_scales);
  if (plan.zigzag_times.back() != ts.back())
    throw std::invalid_argument("combined: last zigzag time must equal the ancestral handoff");
  Trajectory traj;
  traj.push(ts.front(), x_T);
  for (std::size_t i = 1; i < ts.size(); ++i) {
    traj.push(ts[i], f(traj.states.back(), ts[i - 1], ts[i]));
    ++traj.nfe;
  }
  const Matrix handoff = traj.states.back();
  detail::run_zigzag(f, plan, handoff, traj);
  return traj;
}

/// Dispatch on plan.kind. one_step yields a two-point trajectory with NFE 1.
template <typename Model>
Trajectory run_sampler(const Model& f, const SamplerPlan& plan, const Matrix& x_T) {
  switch (plan.kind) {
    case SamplerKind::one_step: {
      Trajectory traj;
      traj.push(plan.t_max, x_T);
      traj.push(0.0, one_step(f, x_T, plan.t_max));
      traj.nfe = 1;
      return traj;
    }
    case SamplerKind::ancestral: return ancestral(f, plan, x_T);
    case SamplerKind::zigzag: return zigzag(f, plan, x_T);
    case SamplerKind::combined: return combined(f, plan, x_T);
  }
  throw std::invalid_argument("run_sampler: bad plan kind");
}

/// Starting noise x_T ~ N(0, T^2 I), column j from stream (seed, noise, j).
inline Matrix initial_noise(Eigen::Index dim, Eigen::Index n, double t_max, std::uint64_t seed) {
  return t_max * column_normals(dim, n, seed, stream::noise);
}

}  // namespace bcm
