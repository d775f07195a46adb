#pragma once

#include <cmath>
#include <stdexcept>

namespace bcm {

/// Skip/output/input scalings of f(x_t, t, u) = c_skip x_t + c_out F(c_in x_t, t, u).
struct CoeffTriple {
  double c_in = 0.0;
  double c_out = 0.0;
  double c_skip = 0.0;
};

/// c_in = 1/sqrt(s^2 + t^2), c_out = s (t - u) / sqrt(s^2 + t^2),
/// c_skip = (s^2 + t u) / (s^2 + t^2). At u == t the (t - u) factor is an
/// exact zero and c_skip divides a number by itself, so the boundary holds bitwise.
inline CoeffTriple coeffs(double t, double u, double sigma_data) {
  if (!(sigma_data > 0.0)) throw std::invalid_argument("coeffs: sigma_data must be > 0");
  if (t < 0.0 || u < 0.0) throw std::invalid_argument("coeffs: times must be >= 0");
  const double s2 = sigma_data * sigma_data;
  const double denom = s2 + t * t;
  const double c_in = 1.0 / std::sqrt(denom);
  return {c_in, sigma_data * (t - u) * c_in, (s2 + t * u) / denom};
}

/// c_out^2 implied by a candidate c_skip under the unit-variance target
/// requirement: (s^2 + t^2) c^2 - 2 (s^2 + t u) c + (s^2 + u^2).
/// Its minimizer over c is the c_skip returned by coeffs().
inline double output_scale_sq(double c_skip, double t, double u, double sigma_data) {
  const double s2 = sigma_data * sigma_data;
  return (s2 + t * t) * c_skip * c_skip - 2.0 * (s2 + t * u) * c_skip + (s2 + u * u);
}

/// |c_skip(t, eps) - sigma^2 / (sigma^2 + (t - eps)^2)|, the distance between
/// this parameterization at u = eps and the single-time consistency-model skip.
inline double cm_compat_gap(double t, double eps, double sigma_data) {
  if (!(eps > 0.0) || !(eps < t)) throw std::invalid_argument("cm_compat_gap: need 0 < eps < t");
  if (!(sigma_data > 0.0)) throw std::invalid_argument("cm_compat_gap: sigma_data must be > 0");
  const double s2 = sigma_data * sigma_data;
  const double ours = (s2 + t * eps) / (s2 + t * t);
  const double cm = s2 / (s2 + (t - eps) * (t - eps));
  return std::abs(ours - cm);
}

}  // namespace bcm
