#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "bcm_lab/oracle.hpp"

namespace {

using bcm::Matrix;
using bcm::Vector;

bcm::MixtureDensity gaussian(const Vector& mu, double s) {
  return {{1.0}, mu, Vector::Constant(mu.size(), s * s)};
}

TEST(Datasets, StandardizedMoments) {
  for (const char* name : {"single_gaussian", "ring8", "moons16"}) {
    const auto d = bcm::datasets::by_name(name, 0.5);
    EXPECT_LT(bcm::mixture_mean(d).cwiseAbs().maxCoeff(), 1e-12) << name;
    EXPECT_LT((bcm::mixture_variance(d).array() - 0.25).abs().maxCoeff(), 1e-12) << name;
    const Matrix x = bcm::sample(d, 200000, 1);
    const Vector m = x.rowwise().mean();
    EXPECT_LT(m.cwiseAbs().maxCoeff(), 0.01) << name;
    const Vector var = (x.colwise() - m).array().square().rowwise().mean();
    EXPECT_LT((var.array() - 0.25).abs().maxCoeff(), 0.01) << name;
  }
  EXPECT_THROW(bcm::datasets::by_name("spiral", 0.5), std::invalid_argument);
}

TEST(Score, SingleGaussianClosedForm) {
  Vector mu(2);
  mu << 0.4, -1.0;
  const auto d = gaussian(mu, 0.5);
  bcm::Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    Vector x(2);
    rng.fill_normal(x);
    const double t = 10 * rng.uniform();
    const Vector expect = -(x - mu) / (0.25 + t * t);
    EXPECT_LT((bcm::score(d, x, t) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Score, ZeroAtCenterOfSymmetricMixture) {
  bcm::MixtureDensity d{{0.5, 0.5}, Matrix(2, 2), Vector::Constant(2, 0.1)};
  d.means << 1, -1, 2, -2;
  for (double t : {0.0, 0.3, 5.0}) EXPECT_LT(bcm::score(d, Vector(Vector::Zero(2)), t).norm(), 1e-15);
}

TEST(Score, FiniteDifferencesOfLogDensity) {
  const auto d = bcm::datasets::ring8(0.5);
  bcm::Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    Vector x(2);
    rng.fill_normal(x);
    const double t = 0.05 + 3 * rng.uniform();
    const Vector s = bcm::score(d, x, t);
    for (int k = 0; k < 2; ++k) {
      Vector xp = x, xm = x;
      const double h = 1e-5 * std::max(1.0, t);
      xp[k] += h;
      xm[k] -= h;
      const double fd = (bcm::log_density(d, xp, t) - bcm::log_density(d, xm, t)) / (2 * h);
      EXPECT_LT(std::abs(fd - s[k]), 1e-6 * std::max(1.0, std::abs(s[k])));
    }
  }
}

TEST(SdePerturb, IdentityAndSpread) {
  const auto d = bcm::datasets::ring8(0.5);
  const Matrix x = bcm::sample(d, 100000, 3);
  const Matrix z = bcm::column_normals(2, 100000, 4, bcm::stream::noise);
  EXPECT_TRUE((bcm::sde_perturb(x, 0.0, z).array() == x.array()).all());
  const double t = 1.7;
  const Matrix diff = bcm::sde_perturb(x, t, z) - x;
  for (int k = 0; k < 2; ++k) {
    const double sd = std::sqrt(diff.row(k).array().square().mean() - std::pow(diff.row(k).mean(), 2));
    EXPECT_NEAR(sd, t, 0.01 * t);
  }
}

TEST(SdePerturb, MarginalMatchesWidenedMixture) {
  const auto d = bcm::datasets::ring8(0.5);
  const double t = 0.4;
  const Matrix noisy = bcm::sde_perturb(bcm::sample(d, 20000, 5), t, bcm::column_normals(2, 20000, 6, bcm::stream::noise));
  auto wide = d;
  wide.component_var.array() += t * t;
  const Matrix direct = bcm::sample(wide, 20000, 7);
  const Matrix other = bcm::sample(wide, 20000, 8);
  bcm::Rng r1(9), r2(9);
  const double sw = bcm::sliced_wasserstein(noisy, direct, 64, r1);
  const double baseline = bcm::sliced_wasserstein(other, direct, 64, r2);
  EXPECT_LT(sw, 3 * baseline + 1e-3);
  // A wrong noise level is clearly separated.
  auto wrong = d;
  wrong.component_var.array() += 0.25 * t * t;
  bcm::Rng r3(9);
  EXPECT_GT(bcm::sliced_wasserstein(noisy, bcm::sample(wrong, 20000, 10), 64, r3), 3 * baseline);
}

Matrix probe_points(double t) {
  Matrix x(2, 64);
  bcm::Rng(11).fill_normal(x);
  return x * std::sqrt(0.25 + t * t);
}

// Errors are measured relative to the spread of the exact result, since the
// ODE is linear in x - mu.
double relative_error(const Matrix& ode, const Matrix& exact, const Vector& mu) {
  return (ode - exact).cwiseAbs().maxCoeff() / (exact.colwise() - mu).cwiseAbs().maxCoeff();
}

TEST(PfOde, MatchesClosedForm) {
  Vector mu(2);
  mu << 0.2, -0.1;
  const auto d = gaussian(mu, 0.5);
  for (auto [a, b] : {std::pair{80.0, 0.002}, std::pair{80.0, 0.0}, std::pair{5.0, 0.3}, std::pair{0.01, 30.0}}) {
    const Matrix x = probe_points(a).colwise() + mu;
    const Matrix exact = bcm::gaussian_flow_map(mu, 0.5, x, a, b);
    // 256 Heun steps over the full noise range leave a few 1e-4 of relative
    // error; 8192 steps bring it under 1e-6.
    EXPECT_LT(relative_error(bcm::pf_ode_solve(d, x, a, b, 256), exact, mu), 1e-3) << a << "->" << b;
    EXPECT_LT(relative_error(bcm::pf_ode_solve(d, x, a, b, 8192), exact, mu), 1e-6) << a << "->" << b;
  }
}

TEST(PfOde, SecondOrderConvergence) {
  const auto d = bcm::datasets::single_gaussian(2, 0.5);
  const Matrix x = probe_points(80);
  const Matrix exact = bcm::gaussian_flow_map(Vector::Zero(2), 0.5, x, 80, 0.002);
  std::vector<double> err;
  for (int n : {32, 64, 128}) err.push_back((bcm::pf_ode_solve(d, x, 80, 0.002, n) - exact).cwiseAbs().maxCoeff());
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double ratio = err[i - 1] / err[i];
    EXPECT_GE(ratio, 3.5);
    EXPECT_LE(ratio, 4.5);
  }
}

TEST(PfOde, IdentityAndReversibility) {
  const auto d = bcm::datasets::ring8(0.5);
  const Matrix x = probe_points(2.0);
  EXPECT_TRUE((bcm::pf_ode_solve(d, x, 2.0, 2.0, 10).array() == x.array()).all());
  const Matrix down = bcm::pf_ode_solve(d, x, 2.0, 0.5, 512);
  const Matrix up = bcm::pf_ode_solve(d, down, 0.5, 2.0, 512);
  EXPECT_LT((up - x).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FlowMap, IdentityCompositionInverse) {
  Vector mu(2);
  mu << -0.3, 0.6;
  const Matrix x = probe_points(3.0);
  EXPECT_TRUE((bcm::gaussian_flow_map(mu, 0.5, x, 3, 3).array() == x.array()).all());
  const Matrix two = bcm::gaussian_flow_map(mu, 0.5, bcm::gaussian_flow_map(mu, 0.5, x, 3, 0.7), 0.7, 12);
  const Matrix one = bcm::gaussian_flow_map(mu, 0.5, x, 3, 12);
  EXPECT_LT((two - one).cwiseAbs().maxCoeff(), 1e-12 * (1 + one.cwiseAbs().maxCoeff()));
  const Matrix back = bcm::gaussian_flow_map(mu, 0.5, bcm::gaussian_flow_map(mu, 0.5, x, 3, 0.01), 0.01, 3);
  EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-12 * (1 + x.cwiseAbs().maxCoeff()));
}

TEST(SlicedWasserstein, SameSetIsZero) {
  const Matrix a = bcm::sample(bcm::datasets::ring8(0.5), 500, 1);
  bcm::Rng rng(2);
  EXPECT_EQ(bcm::sliced_wasserstein(a, a, 16, rng), 0.0);
}

TEST(SlicedWasserstein, OneDimensionalShift) {
  Matrix a(1, 300);
  bcm::Rng(3).fill_normal(a);
  bcm::Rng rng(4);
  EXPECT_NEAR(bcm::sliced_wasserstein(a, a.array() + 1.25, 8, rng), 1.25, 1e-12);
}

// Brute-force W1 between empirical quantile functions on a fine q-grid.
double quantile_oracle(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const int steps = 2000000;
  double s = 0;
  for (int i = 0; i < steps; ++i) {
    const double q = (i + 0.5) / steps;
    const double qa = a[std::min(a.size() - 1, static_cast<std::size_t>(q * a.size()))];
    const double qb = b[std::min(b.size() - 1, static_cast<std::size_t>(q * b.size()))];
    s += std::abs(qa - qb);
  }
  return s / steps;
}

TEST(SlicedWasserstein, UnequalSizesMatchQuantileOracle) {
  bcm::Rng rng(5);
  std::vector<double> a(700), b(1100);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = 0.5 + 2 * rng.normal();
  const double oracle = quantile_oracle(a, b);
  auto ac = a, bc = b;
  EXPECT_NEAR(bcm::wasserstein_1d(ac, bc), oracle, 1e-4 * oracle);
}

TEST(SlicedWasserstein, SeparatedGaussians) {
  Matrix a(2, 100000), b(2, 100000);
  bcm::Rng rng(6);
  rng.fill_normal(a);
  rng.fill_normal(b);
  b.row(0).array() += 4.0;
  bcm::Rng proj(7);
  const double sw = bcm::sliced_wasserstein(a, b, 16, proj);
  // Independent check with the same directions through the quantile oracle.
  bcm::Rng proj2(7);
  double brute = 0;
  Vector dir(2);
  for (int p = 0; p < 16; ++p) {
    do {
      proj2.fill_normal(dir);
    } while (dir.norm() == 0.0);
    dir.normalize();
    std::vector<double> pa(100000), pb(100000);
    Eigen::Map<Eigen::RowVectorXd>(pa.data(), 100000) = dir.transpose() * a;
    Eigen::Map<Eigen::RowVectorXd>(pb.data(), 100000) = dir.transpose() * b;
    brute += quantile_oracle(pa, pb);
  }
  brute /= 16;
  EXPECT_NEAR(sw, brute, 0.02 * brute);
  // Averaged over many directions the projected shift is 4 E|cos phi| = 8 / pi.
  bcm::Rng many(8);
  const double dense = bcm::sliced_wasserstein(a.leftCols(20000), b.leftCols(20000), 4000, many);
  EXPECT_NEAR(dense, 8.0 / std::numbers::pi, 0.03 * 8.0 / std::numbers::pi);
}

TEST(SlicedWasserstein, Errors) {
  bcm::Rng rng(1);
  EXPECT_THROW(bcm::sliced_wasserstein(Matrix::Zero(2, 1), Matrix::Zero(2, 5), 4, rng), std::invalid_argument);
  EXPECT_THROW(bcm::sliced_wasserstein(Matrix::Zero(2, 5), Matrix::Zero(3, 5), 4, rng), std::invalid_argument);
}

}  // namespace
