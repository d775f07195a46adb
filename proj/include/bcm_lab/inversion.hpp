#pragma once

// Mapping data back to noise with the same network, and the applications
// built on it: round-trip reconstruction error, spherical interpolation
// between two real inputs, and mask inpainting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bcm_lab/rng.hpp"
#include "bcm_lab/samplers.hpp"

namespace bcm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// times: eps = t_1 < t_2 < ... < t_N. eps is the scale of the noise injected
/// before the first network call; eps = 0 disables it.
struct InversionPlan {
  std::vector<double> times{0.07, 6.0, 80.0};
  std::uint64_t seed = 0;

  double eps() const { return times.front(); }
  double t_end() const { return times.back(); }
};

namespace ladders {
inline std::vector<double> nfe1() { return {0.07, 80.0}; }
inline std::vector<double> nfe2() { return {0.07, 6.0, 80.0}; }
inline std::vector<double> nfe3() { return {0.07, 1.5, 6.0, 80.0}; }
inline std::vector<double> nfe4() { return {0.07, 1.5, 4.0, 10.0, 80.0}; }
inline std::vector<double> inpaint() { return {0.07, 0.4, 1.0, 2.0}; }
}  // namespace ladders

inline void validate(const InversionPlan& p, double t_max = 80.0) {
  if (p.times.size() < 2) throw std::invalid_argument("inversion: ladder needs at least two times");
  if (p.times.front() < 0.0) throw std::invalid_argument("inversion: eps must be >= 0");
  for (std::size_t i = 1; i < p.times.size(); ++i)
    if (!(p.times[i] > p.times[i - 1])) throw std::invalid_argument("inversion: ladder must strictly increase");
  if (p.times.back() > t_max) throw std::invalid_argument("inversion: ladder exceeds T");
}

/// x_{t_1} = x_0 + eps * sigma, then x_{t_{n+1}} = f(x_{t_n}, t_n, t_{n+1}).
/// Column j draws its sigma from stream (seed, inversion, j).
template <typename Model>
Trajectory invert(const Model& f, const InversionPlan& plan, const Matrix& x0) {
  validate(plan);
  Trajectory traj;
  Matrix x = x0;
  if (plan.eps() != 0.0)
    x += plan.eps() * column_normals(x0.rows(), x0.cols(), mix_key(plan.seed, stream::inversion, 0), stream::noise);
  traj.push(plan.times.front(), x);
  for (std::size_t i = 1; i < plan.times.size(); ++i) {
    traj.push(plan.times[i], f(traj.states.back(), plan.times[i - 1], plan.times[i]));
    ++traj.nfe;
  }
  return traj;
}

/// Per-dimension affine map onto [0, 1] from the min/max of a sample set.
struct UnitRange {
  Vector lo, hi;

  static UnitRange of(const Matrix& x) { return {x.rowwise().minCoeff(), x.rowwise().maxCoeff()}; }

  Vector span() const {
    Vector s = hi - lo;
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (!(s[i] > 0.0)) s[i] = 1.0;
    return s;
  }
};

struct RoundtripResult {
  Matrix reconstruction;
  double mse = 0.0;  // mean over samples and dims, in unit-range coordinates
  int nfe_inversion = 0;
  int nfe_generation = 0;
};

/// Inverts with `inv` and regenerates with `gen` (whose start time should
/// be the ladder's last time), then scores the per-dimension MSE after
/// mapping both sides through the unit-range transform of `x0`.
template <typename Model>
RoundtripResult roundtrip(const Model& f, const InversionPlan& inv, const SamplerPlan& gen, const Matrix& x0) {
  if (x0.cols() == 0) throw std::invalid_argument("roundtrip: empty sample set");
  const Trajectory up = invert(f, inv, x0);
  const Trajectory down = run_sampler(f, gen, up.final_state());
  const UnitRange range = UnitRange::of(x0);
  const Vector inv_span = range.span().cwiseInverse();
  const Matrix err = (down.final_state() - x0).array().colwise() * inv_span.array();
  return {down.final_state(), err.squaredNorm() / static_cast<double>(err.size()), up.nfe, down.nfe};
}

template <typename Model>
double roundtrip_mse(const Model& f, const InversionPlan& inv, const SamplerPlan& gen, const Matrix& x0) {
  return roundtrip(f, inv, gen, x0).mse;
}

/// sin((1-a) psi)/sin(psi) z1 + sin(a psi)/sin(psi) z2, psi the angle between z1 and z2.
inline Vector slerp(const Vector& z1, const Vector& z2, double alpha) {
  if (z1.size() != z2.size()) throw std::invalid_argument("slerp: dimension mismatch");
  const double n1 = z1.norm(), n2 = z2.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw std::invalid_argument("slerp: zero vector");
  const double cosv = std::clamp(z1.dot(z2) / (n1 * n2), -1.0, 1.0);
  const double psi = std::acos(cosv);
  const double s = std::sin(psi);
  if (s < 1e-12) {
    if (psi > 0.5 * std::numbers::pi) throw std::invalid_argument("slerp: antiparallel endpoints");
    return (1.0 - alpha) * z1 + alpha * z2;
  }
  return (std::sin((1.0 - alpha) * psi) / s) * z1 + (std::sin(alpha * psi) / s) * z2;
}

struct Interpolation {
  Vector z_a, z_b;  // inverted endpoints at the ladder's last time
  Matrix outputs;   // one column per alpha
  int nfe_inversion = 0;
};

/// Inverts x_a and x_b (columns 0 and 1 of one batch, so their injected
/// noises differ), slerps in noise space, and maps each point back in one step.
template <typename Model>
Interpolation slerp_interpolate(const Model& f, const Vector& x_a, const Vector& x_b,
                                const std::vector<double>& alphas, const InversionPlan& inv) {
  if (x_a.size() != x_b.size()) throw std::invalid_argument("interpolate: dimension mismatch");
  if (x_a == x_b) throw std::invalid_argument("interpolate: endpoints must differ");
  Matrix both(x_a.size(), 2);
  both.col(0) = x_a;
  both.col(1) = x_b;
  const Trajectory up = invert(f, inv, both);
  Interpolation out{up.final_state().col(0), up.final_state().col(1), Matrix(x_a.size(), static_cast<Eigen::Index>(alphas.size())), up.nfe};
  for (std::size_t i = 0; i < alphas.size(); ++i)
    out.outputs.col(static_cast<Eigen::Index>(i)) = slerp(out.z_a, out.z_b, alphas[i]);
  out.outputs = one_step(f, out.outputs, inv.t_end());
  return out;
}

/// Binary mask over coordinates; 1 marks a missing entry.
struct Mask {
  std::vector<int> missing;
  double init_scale = 0.5;

  Eigen::Index dim() const { return static_cast<Eigen::Index>(missing.size()); }
};

inline void validate(const Mask& m) {
  if (m.missing.empty()) throw std::invalid_argument("mask: empty");
  bool observed = false;
  for (int v : m.missing) {
    if (v != 0 && v != 1) throw std::invalid_argument("mask: entries must be 0 or 1");
    observed = observed || v == 0;
  }
  if (!observed) throw std::invalid_argument("mask: every coordinate is missing");
  if (!(m.init_scale >= 0.0)) throw std::invalid_argument("mask: init_scale must be >= 0");
}

/// Mask inpainting. Missing coordinates start as s * sigma, the ladder is
/// climbed with the masked part re-drawn as t_n * sigma'' after every step, a
/// single call maps back to 0, and observed coordinates are copied from the
/// input at the end. Each column is an independent trial.
template <typename Model>
Matrix inpaint(const Model& f, const Matrix& x_masked, const Mask& mask, const InversionPlan& plan) {
  validate(mask);
  validate(plan);
  if (x_masked.rows() != mask.dim()) throw std::invalid_argument("inpaint: mask dimension mismatch");
  const Eigen::Index dim = x_masked.rows(), n = x_masked.cols();
  auto noise = [&](std::uint64_t step) {
    return column_normals(dim, n, mix_key(plan.seed, stream::inpaint, step), stream::noise);
  };
  auto fill_missing = [&](Matrix& x, const Matrix& values) {
    for (Eigen::Index i = 0; i < dim; ++i)
      if (mask.missing[static_cast<std::size_t>(i)]) x.row(i) = values.row(i);
  };

  Matrix x = x_masked;
  fill_missing(x, mask.init_scale * noise(0));
  x += plan.eps() * noise(1);
  for (std::size_t i = 1; i < plan.times.size(); ++i) {
    x = f(x, plan.times[i - 1], plan.times[i]);
    fill_missing(x, plan.times[i] * noise(i + 1));
  }
  const Matrix x0 = f(x, plan.t_end(), 0.0);
  Matrix out = x_masked;
  fill_missing(out, x0);
  return out;
}

}  // namespace bcm
