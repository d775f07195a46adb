#pragma once

// Ground truth for the toy problems: Gaussian-mixture data with closed-form
// VE marginals, their scores, a Heun integrator for the probability-flow ODE
// dx/dt = -t * score(x, t), the exact single-Gaussian flow map, and a
// sliced Wasserstein distance for comparing sample sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcm_lab/rng.hpp"

namespace bcm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// sum_i w_i N(mu_i, diag(var)) with a per-dimension variance shared by all components.
struct MixtureDensity {
  std::vector<double> weights;
  Matrix means;       // dim x components
  Vector component_var;

  int dim() const noexcept { return static_cast<int>(means.rows()); }
  int components() const noexcept { return static_cast<int>(means.cols()); }
};

inline void validate(const MixtureDensity& d) {
  if (d.means.cols() == 0 || static_cast<std::size_t>(d.means.cols()) != d.weights.size())
    throw std::invalid_argument("mixture: weights/means mismatch");
  if (d.component_var.size() != d.means.rows())
    throw std::invalid_argument("mixture: variance dimension mismatch");
  double total = 0.0;
  for (double w : d.weights) {
    if (!(w > 0.0)) throw std::invalid_argument("mixture: weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture: weights must sum to 1");
  if ((d.component_var.array() < 0.0).any())
    throw std::invalid_argument("mixture: negative component variance");
}

inline Vector mixture_mean(const MixtureDensity& d) {
  Vector m = Vector::Zero(d.dim());
  for (int i = 0; i < d.components(); ++i) m += d.weights[static_cast<std::size_t>(i)] * d.means.col(i);
  return m;
}

inline Vector mixture_variance(const MixtureDensity& d) {
  const Vector m = mixture_mean(d);
  Vector v = d.component_var;
  for (int i = 0; i < d.components(); ++i)
    v.array() += d.weights[static_cast<std::size_t>(i)] * (d.means.col(i) - m).array().square();
  return v;
}

/// Centers the mixture and scales each dimension so its std equals sigma_data.
inline MixtureDensity standardize(MixtureDensity d, double sigma_data) {
  validate(d);
  const Vector m = mixture_mean(d);
  const Vector scale = sigma_data / mixture_variance(d).array().sqrt();
  for (int i = 0; i < d.components(); ++i)
    d.means.col(i) = ((d.means.col(i) - m).array() * scale.array()).matrix();
  d.component_var = (d.component_var.array() * scale.array().square()).matrix();
  return d;
}

namespace datasets {

inline MixtureDensity single_gaussian(int dim, double sigma_data) {
  MixtureDensity d{{1.0}, Matrix::Zero(dim, 1), Vector::Constant(dim, sigma_data * sigma_data)};
  return d;
}

/// Eight equal-weight components on a circle.
inline MixtureDensity ring8(double sigma_data, double component_std = 0.1) {
  MixtureDensity d{std::vector<double>(8, 1.0 / 8.0), Matrix(2, 8),
                   Vector::Constant(2, component_std * component_std)};
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    d.means(0, k) = std::cos(a);
    d.means(1, k) = std::sin(a);
  }
  return standardize(std::move(d), sigma_data);
}

/// Two interleaved half circles, each carried by eight components.
inline MixtureDensity moons16(double sigma_data, double component_std = 0.1) {
  MixtureDensity d{std::vector<double>(16, 1.0 / 16.0), Matrix(2, 16),
                   Vector::Constant(2, component_std * component_std)};
  for (int k = 0; k < 8; ++k) {
    const double a = std::numbers::pi * k / 7.0;
    d.means(0, k) = std::cos(a);
    d.means(1, k) = std::sin(a);
    d.means(0, 8 + k) = 1.0 - std::cos(a);
    d.means(1, 8 + k) = 0.5 - std::sin(a);
  }
  return standardize(std::move(d), sigma_data);
}

inline MixtureDensity by_name(const std::string& name, double sigma_data) {
  if (name == "single_gaussian") return single_gaussian(2, sigma_data);
  if (name == "ring8") return ring8(sigma_data);
  if (name == "moons16") return moons16(sigma_data);
  throw std::invalid_argument("unknown dataset '" + name + "'");
}

}  // namespace datasets

/// n samples (columns); column j is drawn from stream (seed, dataset, j).
inline Matrix sample(const MixtureDensity& d, Eigen::Index n, std::uint64_t seed) {
  Matrix out(d.dim(), n);
  const Vector sd = d.component_var.array().sqrt();
  for (Eigen::Index j = 0; j < n; ++j) {
    Rng rng(seed, stream::dataset, static_cast<std::uint64_t>(j));
    const double r = rng.uniform();
    double acc = 0.0;
    int c = d.components() - 1;
    for (int i = 0; i < d.components(); ++i) {
      acc += d.weights[static_cast<std::size_t>(i)];
      if (r < acc) {
        c = i;
        break;
      }
    }
    for (int k = 0; k < d.dim(); ++k) out(k, j) = d.means(k, c) + sd[k] * rng.normal();
  }
  return out;
}

namespace detail {

// Per-component log N(x; mu_i, diag(var + t^2)) including log w_i.
inline Vector component_log_terms(const MixtureDensity& d, const Vector& x, double t) {
  const Vector var = d.component_var.array() + t * t;
  const double log_norm = -0.5 * (var.array().log().sum() + d.dim() * std::log(2.0 * std::numbers::pi));
  Vector terms(d.components());
  for (int i = 0; i < d.components(); ++i) {
    const double quad = ((x - d.means.col(i)).array().square() / var.array()).sum();
    terms[i] = std::log(d.weights[static_cast<std::size_t>(i)]) + log_norm - 0.5 * quad;
  }
  return terms;
}

}  // namespace detail

/// log p_t(x) for the VE marginal p_t = sum_i w_i N(mu_i, diag(var + t^2)).
inline double log_density(const MixtureDensity& d, const Vector& x, double t) {
  const Vector terms = detail::component_log_terms(d, x, t);
  const double mx = terms.maxCoeff();
  return mx + std::log((terms.array() - mx).exp().sum());
}

/// grad_x log p_t(x).
inline Vector score(const MixtureDensity& d, const Vector& x, double t) {
  if (t < 0.0) throw std::invalid_argument("score: t must be >= 0");
  if (x.size() != d.dim()) throw std::invalid_argument("score: dimension mismatch");
  const Vector terms = detail::component_log_terms(d, x, t);
  const Vector resp = (terms.array() - terms.maxCoeff()).exp();
  const double total = resp.sum();
  const Vector var = d.component_var.array() + t * t;
  Vector s = Vector::Zero(d.dim());
  for (int i = 0; i < d.components(); ++i)
    s.array() -= (resp[i] / total) * (x - d.means.col(i)).array() / var.array();
  return s;
}

inline Matrix score(const MixtureDensity& d, const Matrix& x, double t) {
  Matrix s(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) s.col(j) = score(d, Vector(x.col(j)), t);
  return s;
}

/// x + t z: a VE-marginal sample at noise scale t.
inline Matrix sde_perturb(const Matrix& x, double t, const Matrix& z) {
  if (t < 0.0) throw std::invalid_argument("sde_perturb: t must be >= 0");
  if (x.rows() != z.rows() || x.cols() != z.cols())
    throw std::invalid_argument("sde_perturb: shape mismatch");
  return x + t * z;
}

/// Heun integration of dx/dt = -t * score(x, t) from t_from to t_to with
/// substeps uniform in t^(1/rho). Works in either direction.
inline Matrix pf_ode_solve(const MixtureDensity& d, const Matrix& x_from, double t_from, double t_to,
                           int n_steps, double rho = 7.0) {
  if (t_from < 0.0 || t_to < 0.0) throw std::invalid_argument("pf_ode_solve: times must be >= 0");
  if (n_steps < 1) throw std::invalid_argument("pf_ode_solve: n_steps must be >= 1");
  Matrix x = x_from;
  if (t_from == t_to) return x;
  const double a = std::pow(t_from, 1.0 / rho);
  const double b = std::pow(t_to, 1.0 / rho);
  auto time_at = [&](int i) {
    if (i == 0) return t_from;
    if (i == n_steps) return t_to;
    return std::pow(a + (static_cast<double>(i) / n_steps) * (b - a), rho);
  };
  auto drift = [&](const Matrix& y, double t) -> Matrix { return -t * score(d, y, t); };
  for (int i = 0; i < n_steps; ++i) {
    const double t0 = time_at(i);
    const double t1 = time_at(i + 1);
    const double h = t1 - t0;
    const Matrix d0 = drift(x, t0);
    const Matrix euler = x + h * d0;
    x += 0.5 * h * (d0 + drift(euler, t1));
  }
  return x;
}

/// Exact flow map for data N(mu, sigma^2 I): mu + sqrt((s^2 + u^2) / (s^2 + t^2)) (x_t - mu).
inline Matrix gaussian_flow_map(const Vector& mu, double sigma_data, const Matrix& x_t, double t,
                                double u) {
  if (!(sigma_data > 0.0)) throw std::invalid_argument("gaussian_flow_map: sigma_data must be > 0");
  if (t == u) return x_t;
  const double s2 = sigma_data * sigma_data;
  const double ratio = std::sqrt((s2 + u * u) / (s2 + t * t));
  return (ratio * (x_t.colwise() - mu)).colwise() + mu;
}

/// The analytically optimal consistency function for single-Gaussian data.
struct GaussianOracleModel {
  Vector mu;
  double sigma_data = 0.5;

  Matrix operator()(const Matrix& x, double t, double u) const {
    return gaussian_flow_map(mu, sigma_data, x, t, u);
  }
};

/// 1-D Wasserstein-1 between two empirical distributions (sorted in place).
inline double wasserstein_1d(std::vector<double>& a, std::vector<double>& b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / na;
  }
  // Integrate |F_a^-1(q) - F_b^-1(q)| over the merged quantile breakpoints.
  double s = 0.0, q = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double qa = (i + 1) / na;
    const double qb = (j + 1) / nb;
    const double next = std::min(qa, qb);
    s += (next - q) * std::abs(a[i] - b[j]);
    q = next;
    if (qa <= next) ++i;
    if (qb <= next) ++j;
  }
  return s;
}

/// Mean over random unit directions of the 1-D W1 between projected sample sets.
inline double sliced_wasserstein(const Matrix& a, const Matrix& b, int n_projections, Rng& rng) {
  if (a.rows() != b.rows()) throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  if (a.cols() < 2 || b.cols() < 2)
    throw std::invalid_argument("sliced_wasserstein: need at least 2 samples per set");
  if (n_projections < 1) throw std::invalid_argument("sliced_wasserstein: n_projections must be >= 1");
  std::vector<double> pa(static_cast<std::size_t>(a.cols()));
  std::vector<double> pb(static_cast<std::size_t>(b.cols()));
  double total = 0.0;
  Vector dir(a.rows());
  for (int p = 0; p < n_projections; ++p) {
    do {
      rng.fill_normal(dir);
    } while (dir.norm() == 0.0);
    dir.normalize();
    Eigen::Map<Eigen::RowVectorXd>(pa.data(), a.cols()) = dir.transpose() * a;
    Eigen::Map<Eigen::RowVectorXd>(pb.data(), b.cols()) = dir.transpose() * b;
    total += wasserstein_1d(pa, pb);
  }
  return total / n_projections;
}

}  // namespace bcm
