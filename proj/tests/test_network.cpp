#include <cmath>

#include <gtest/gtest.h>

#include "bcm_lab/network.hpp"

namespace {

bcm::Arch small_arch(const std::string& act = "silu") {
  bcm::Arch a;
  a.dim = 2;
  a.width = 8;
  a.depth = 2;
  a.n_freqs = 4;
  a.emb_width = 6;
  a.activation = act;
  return a;
}

// Fills every parameter (including the zero-initialized output layer).
bcm::ModelParams random_params(const bcm::Arch& a, std::uint64_t seed, double scale = 0.5) {
  bcm::ModelParams p = bcm::init_params(a, 0.5, seed);
  bcm::Rng rng(seed, 99);
  for (auto& v : p.values) v = scale * rng.normal();
  return p;
}

TEST(Embedding, HalvesAndSwap) {
  const bcm::TimeEmbedding emb{5, 0.05, 4.0};
  const auto same = bcm::embed_times(0.7, 0.7, emb);
  EXPECT_TRUE((same.head(10).array() == same.tail(10).array()).all());
  const auto ab = bcm::embed_times(0.3, 12.0, emb);
  const auto ba = bcm::embed_times(12.0, 0.3, emb);
  EXPECT_TRUE((ab.head(10).array() == ba.tail(10).array()).all());
  EXPECT_TRUE((ab.tail(10).array() == ba.head(10).array()).all());
}

// The embedding feature is g(t) = log(t + 1e-8); where g vanishes the
// cosine channels are 1 and the sine channels 0.
TEST(Embedding, CosOneSinZeroWhereFeatureVanishes) {
  const bcm::TimeEmbedding emb{6, 0.05, 4.0};
  const double t0 = 1.0 - bcm::TimeEmbedding::kTimeFloor;
  ASSERT_EQ(bcm::TimeEmbedding::log_time(t0), 0.0);
  const auto v = emb.encode(bcm::TimeEmbedding::log_time(t0));
  for (int k = 0; k < 6; ++k) {
    EXPECT_EQ(v[k], 1.0);
    EXPECT_EQ(v[6 + k], 0.0);
  }
}

TEST(Embedding, DirectFormula) {
  const bcm::TimeEmbedding emb{4, 0.1, 8.0};
  const double t = 3.7;
  const auto v = emb.encode(std::log(t + 1e-8));
  for (int k = 0; k < 4; ++k) {
    const double w = 0.1 * std::pow(80.0, k / 3.0);
    EXPECT_NEAR(v[k], std::cos(w * std::log(t + 1e-8)), 1e-14);
    EXPECT_NEAR(v[4 + k], std::sin(w * std::log(t + 1e-8)), 1e-14);
  }
}

TEST(Forward, ZeroOutputLayerAtInit) {
  const auto a = small_arch();
  const auto p = bcm::init_params(a, 0.5, 1);
  bcm::Matrix x(2, 5);
  bcm::Rng(2).fill_normal(x);
  const auto y = bcm::forward(p, x * 30, bcm::Vector::Constant(5, 4.0), bcm::Vector::Constant(5, 0.1));
  EXPECT_EQ(y.rows(), 2);
  EXPECT_EQ(y.cols(), 5);
  EXPECT_TRUE((y.array() == 0.0).all());
}

TEST(Forward, ShapeAndParamCount) {
  bcm::Arch a;
  a.dim = 3;
  const auto p = bcm::init_params(a, 0.5, 1);
  EXPECT_EQ(p.values.size(), bcm::param_count(a));
  const auto y = bcm::forward(p, bcm::Matrix::Ones(3, 2), bcm::Vector::Constant(2, 1.0), bcm::Vector::Zero(2));
  EXPECT_EQ(y.rows(), 3);
  EXPECT_THROW(bcm::forward(p, bcm::Matrix::Ones(2, 2), bcm::Vector::Ones(2), bcm::Vector::Zero(2)),
               std::invalid_argument);
}

TEST(Forward, SmallPerturbationSmallChange) {
  bcm::Arch a;
  auto p = bcm::init_params(a, 0.5, 3);
  // Give the output layer default-scale weights too, so the probe is not trivially zero.
  const auto shapes = bcm::layer_shapes(a);
  bcm::Rng rng(4);
  const auto& out = shapes.back();
  for (std::size_t i = 0; i < static_cast<std::size_t>(out.out * out.in); ++i)
    p.values[out.weight_offset + i] = rng.normal() / std::sqrt(static_cast<double>(out.in));
  for (int i = 0; i < 50; ++i) {
    bcm::Matrix x(2, 1), d(2, 1);
    rng.fill_normal(x);
    rng.fill_normal(d);
    d *= 1e-6 / d.norm();
    const bcm::Vector t = bcm::Vector::Constant(1, 80 * rng.uniform()), u = bcm::Vector::Constant(1, 0.0);
    const double change = (bcm::forward(p, x + d, t, u) - bcm::forward(p, x, t, u)).norm();
    EXPECT_LE(change, 1e-2);
  }
}

TEST(Backward, OutputBiasIdentity) {
  const auto a = small_arch();
  const auto p = random_params(a, 5);
  bcm::Matrix x(2, 7);
  bcm::Rng(6).fill_normal(x);
  bcm::ForwardCache cache;
  const bcm::Vector t = bcm::Vector::LinSpaced(7, 0.1, 5), u = bcm::Vector::Zero(7);
  const auto y = bcm::forward(p, x, t, u, &cache);
  bcm::GradientTape tape(p);
  bcm::backward(p, cache, 2 * y, &tape);
  const auto& out = bcm::layer_shapes(a).back();
  const bcm::Vector expect = 2 * y.rowwise().sum();
  for (int i = 0; i < a.dim; ++i) EXPECT_NEAR(tape.grads[out.bias_offset + static_cast<std::size_t>(i)], expect[i], 1e-12);
}

double fd_relative_error(const std::string& act) {
  const auto a = small_arch(act);
  auto p = random_params(a, 7);
  bcm::Matrix x(2, 3), w(2, 3);
  bcm::Rng rng(8);
  rng.fill_normal(x);
  rng.fill_normal(w);
  const bcm::Vector t = (bcm::Vector(3) << 0.05, 1.3, 40.0).finished();
  const bcm::Vector u = (bcm::Vector(3) << 0.0, 0.7, 2.0).finished();
  auto objective = [&](const bcm::ModelParams& q) { return (bcm::forward(q, x, t, u).array() * w.array()).sum(); };
  bcm::ForwardCache cache;
  bcm::forward(p, x, t, u, &cache);
  bcm::GradientTape tape(p);
  bcm::backward(p, cache, w, &tape);
  double worst = 0;
  for (int probe = 0; probe < 40; ++probe) {
    const auto i = static_cast<std::size_t>(rng() % p.values.size());
    const double h = 1e-4, keep = p.values[i];
    p.values[i] = keep + h;
    const double fp = objective(p);
    p.values[i] = keep - h;
    const double fm = objective(p);
    p.values[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(fd - tape.grads[i]) / std::max({std::abs(fd), std::abs(tape.grads[i]), 1e-6}));
  }
  return worst;
}

TEST(Backward, FiniteDifferencesSilu) { EXPECT_LT(fd_relative_error("silu"), 1e-4); }
TEST(Backward, FiniteDifferencesTanh) { EXPECT_LT(fd_relative_error("tanh"), 1e-4); }

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  const auto a = small_arch();
  const auto p = random_params(a, 12);
  bcm::Matrix x(2, 2), w(2, 2);
  bcm::Rng rng(13);
  rng.fill_normal(x);
  rng.fill_normal(w);
  const bcm::Vector t = bcm::Vector::Constant(2, 2.5), u = bcm::Vector::Constant(2, 0.4);
  bcm::ForwardCache cache;
  bcm::consistency(p, x, t, u, &cache);
  bcm::Matrix gx;
  bcm::consistency_backward(p, cache, w, nullptr, &gx);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    bcm::Matrix xp = x, xm = x;
    xp(i) += 1e-5;
    xm(i) -= 1e-5;
    const double fd = ((bcm::consistency(p, xp, t, u) - bcm::consistency(p, xm, t, u)).array() * w.array()).sum() / 2e-5;
    EXPECT_NEAR(gx(i), fd, 1e-7 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Backward, StopGradientLeavesTapeUntouched) {
  const auto a = small_arch();
  const auto p = random_params(a, 9);
  bcm::ForwardCache cache;
  bcm::Matrix x = bcm::Matrix::Ones(2, 3);
  bcm::consistency(p, x, bcm::Vector::Constant(3, 1.0), bcm::Vector::Zero(3), &cache);
  bcm::GradientTape tape(p);
  bcm::Matrix gx;
  bcm::consistency_backward(p, cache, bcm::Matrix::Ones(2, 3), nullptr, &gx);
  for (double g : tape.grads) EXPECT_EQ(g, 0.0);
  EXPECT_TRUE(gx.allFinite());
}

TEST(Backward, RequiresRecordedForward) {
  const auto a = small_arch();
  const auto p = random_params(a, 1);
  bcm::ForwardCache cache;
  bcm::GradientTape tape(p);
  EXPECT_THROW(bcm::backward(p, cache, bcm::Matrix::Ones(2, 1), &tape), std::logic_error);
}

TEST(Consistency, BoundaryBitwise) {
  const auto p = random_params(bcm::Arch{}, 10, 1.0);
  bcm::Rng rng(14);
  for (int i = 0; i < 200; ++i) {
    bcm::Matrix x(2, 1);
    rng.fill_normal(x);
    x *= 80 * rng.uniform();
    const bcm::Vector t = bcm::Vector::Constant(1, 80 * rng.uniform());
    const auto f = bcm::consistency(p, x, t, t);
    EXPECT_TRUE((f.array() == x.array()).all());
  }
}

TEST(NetworkModel, BlockedEvaluationMatchesDirect) {
  const auto p = random_params(small_arch(), 15);
  bcm::Matrix x(2, 1001);
  bcm::Rng(16).fill_normal(x);
  const bcm::NetworkModel m(p, 128);
  const auto a = m(x, 3.0, 0.5);
  const auto b = bcm::consistency(p, x, bcm::Vector::Constant(1001, 3.0), bcm::Vector::Constant(1001, 0.5));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
