#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "bcm_lab/inversion.hpp"
#include "bcm_lab/oracle.hpp"

namespace {

using bcm::Matrix;
using bcm::Vector;

bcm::GaussianOracleModel oracle() { return {Vector::Zero(2), 0.5}; }

Matrix data(int n, std::uint64_t seed) { return bcm::sample(bcm::datasets::single_gaussian(2, 0.5), n, seed); }

TEST(Invert, LadderLengthIsNfe) {
  const auto f = oracle();
  const Matrix x = data(10, 1);
  EXPECT_EQ(bcm::invert(f, {bcm::ladders::nfe1(), 0}, x).nfe, 1);
  EXPECT_EQ(bcm::invert(f, {bcm::ladders::nfe2(), 0}, x).nfe, 2);
  EXPECT_EQ(bcm::invert(f, {bcm::ladders::nfe4(), 0}, x).nfe, 4);
}

TEST(Invert, OracleZeroNoiseIsExactBijection) {
  const auto f = oracle();
  const Matrix x = data(500, 2);
  for (const auto& lad : {std::vector<double>{0, 80}, std::vector<double>{0, 6, 80}}) {
    const auto up = bcm::invert(f, {lad, 7}, x);
    const Matrix back = bcm::one_step(f, up.final_state(), 80);
    EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(bcm::roundtrip_mse(f, {lad, 7}, bcm::plans::one_step(80), x), 1e-24);
  }
}

TEST(Invert, OracleGaussianizes) {
  const auto f = oracle();
  const Matrix z = bcm::invert(f, {bcm::ladders::nfe2(), 3}, data(20000, 3)).final_state();
  for (int k = 0; k < 2; ++k) {
    const double sd = std::sqrt((z.row(k).array() - z.row(k).mean()).square().mean());
    EXPECT_NEAR(sd, 80.0, 8.0);
  }
}

TEST(Invert, NoiseIsSeededAndValidated) {
  const auto f = oracle();
  const Matrix x = data(20, 4);
  const auto a = bcm::invert(f, {bcm::ladders::nfe2(), 1}, x);
  const auto b = bcm::invert(f, {bcm::ladders::nfe2(), 1}, x);
  const auto c = bcm::invert(f, {bcm::ladders::nfe2(), 2}, x);
  EXPECT_TRUE((a.final_state().array() == b.final_state().array()).all());
  EXPECT_FALSE((a.final_state().array() == c.final_state().array()).all());
  EXPECT_THROW(bcm::invert(f, {{0.07}, 0}, x), std::invalid_argument);
  EXPECT_THROW(bcm::invert(f, {{0.07, 6, 3}, 0}, x), std::invalid_argument);
  EXPECT_THROW(bcm::invert(f, {{0.07, 100}, 0}, x), std::invalid_argument);
}

TEST(Roundtrip, NonNegativeAndUsesUnitRange) {
  const auto f = oracle();
  const Matrix x = data(300, 5);
  const auto r = bcm::roundtrip(f, {bcm::ladders::nfe2(), 1}, bcm::plans::one_step(), x);
  EXPECT_GE(r.mse, 0.0);
  const auto range = bcm::UnitRange::of(x);
  const Matrix e = (r.reconstruction - x).array().colwise() / range.span().array();
  EXPECT_NEAR(r.mse, e.squaredNorm() / static_cast<double>(e.size()), 1e-15);
  EXPECT_EQ(r.nfe_inversion, 2);
  EXPECT_EQ(r.nfe_generation, 1);
}

TEST(Slerp, Endpoints) {
  Vector a(3), b(3);
  a << 1, 2, 3;
  b << -2, 0.5, 1;
  EXPECT_LT((bcm::slerp(a, b, 0) - a).norm(), 1e-14);
  EXPECT_LT((bcm::slerp(a, b, 1) - b).norm(), 1e-14);
}

TEST(Slerp, PreservesEqualNorms) {
  bcm::Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    Vector a(4), b(4);
    rng.fill_normal(a);
    rng.fill_normal(b);
    b *= a.norm() / b.norm();
    for (double alpha : {0.1, 0.37, 0.5, 0.9}) EXPECT_NEAR(bcm::slerp(a, b, alpha).norm(), a.norm(), 1e-12);
  }
}

// Householder reflection across the bisector of two orthogonal unit vectors
// gives psi = pi/2, where the midpoint is (z1 + z2) / sqrt(2).
TEST(Slerp, RightAngleMidpoint) {
  Vector z1(3);
  z1 << 0.6, 0.8, 0;
  Vector v(3);
  v << 0.6 - 0, 0.8 - 0, -1;  // z1 - e3
  const Matrix h = Matrix::Identity(3, 3) - 2 * v * v.transpose() / v.squaredNorm();
  const Vector z2 = h * z1;
  ASSERT_NEAR(z1.dot(z2), 0.0, 1e-15);
  EXPECT_LT((bcm::slerp(z1, z2, 0.5) - (z1 + z2) / std::numbers::sqrt2).norm(), 1e-15);
}

TEST(Slerp, DegenerateInputs) {
  Vector a(2), b(2);
  a << 1, 0;
  b << -2, 0;
  EXPECT_THROW(bcm::slerp(a, b, 0.5), std::invalid_argument);
  EXPECT_THROW(bcm::slerp(a, Vector::Zero(2), 0.5), std::invalid_argument);
  EXPECT_LT((bcm::slerp(a, 3 * a, 0.5) - 2 * a).norm(), 1e-15);
}

TEST(Interpolate, EndpointsMatchRoundtrip) {
  const auto f = oracle();
  const Matrix x = data(2, 7);
  const bcm::InversionPlan inv{bcm::ladders::nfe2(), 11};
  const auto r = bcm::slerp_interpolate(f, x.col(0), x.col(1), {0, 0.5, 1}, inv);
  const auto rt = bcm::roundtrip(f, inv, bcm::plans::one_step(80), x);
  EXPECT_LT((r.outputs.col(0) - rt.reconstruction.col(0)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((r.outputs.col(2) - rt.reconstruction.col(1)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(bcm::slerp_interpolate(f, x.col(0), x.col(0), {0.5}, inv), std::invalid_argument);
}

TEST(Interpolate, EndpointsGetDifferentNoise) {
  const auto f = oracle();
  Matrix x(2, 2);
  x << 0.1, 0.1 + 1e-9, 0.2, 0.2;
  const auto r = bcm::slerp_interpolate(f, x.col(0), x.col(1), {0.5}, {bcm::ladders::nfe2(), 3});
  EXPECT_GT((r.z_a - r.z_b).norm(), 1.0);
}

TEST(Inpaint, ObservedCoordinatesUntouched) {
  const auto f = oracle();
  Matrix x = data(1000, 8);
  x.row(1).setZero();
  const Matrix out = bcm::inpaint(f, x, {{0, 1}, 0.5}, {bcm::ladders::inpaint(), 4});
  EXPECT_TRUE((out.row(0).array() == x.row(0).array()).all());
  EXPECT_FALSE((out.row(1).array() == 0.0).all());
}

TEST(Inpaint, NothingMissingReturnsInput) {
  const auto f = oracle();
  const Matrix x = data(50, 9);
  const Matrix out = bcm::inpaint(f, x, {{0, 0}, 0.5}, {bcm::ladders::inpaint(), 4});
  EXPECT_TRUE((out.array() == x.array()).all());
}

TEST(Inpaint, Validation) {
  const auto f = oracle();
  const Matrix x = data(5, 10);
  EXPECT_THROW(bcm::inpaint(f, x, {{1, 1}, 0.5}, {bcm::ladders::inpaint(), 0}), std::invalid_argument);
  EXPECT_THROW(bcm::inpaint(f, x, {{0, 2}, 0.5}, {bcm::ladders::inpaint(), 0}), std::invalid_argument);
  EXPECT_THROW(bcm::inpaint(f, x, {{0, 1, 0}, 0.5}, {bcm::ladders::inpaint(), 0}), std::invalid_argument);
}

// For isotropic data N(0, s^2 I) the conditional law of a missing coordinate
// given the observed one is N(0, s^2).
TEST(Inpaint, OracleConditionalMoments) {
  const auto f = oracle();
  Matrix x = data(10000, 11);
  x.row(1).setZero();
  const Matrix out = bcm::inpaint(f, x, {{0, 1}, 0.5}, {bcm::ladders::inpaint(), 12});
  const double mean = out.row(1).mean();
  EXPECT_LT(std::abs(mean), 0.1 * 0.5);
}

}  // namespace
