#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include <Eigen/Dense>

namespace bcm {

// Counter-based random streams. Every random draw in the library is keyed by
// (seed, stream, index) so results do not depend on worker count or on the
// order in which independent items are processed.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix_key(std::uint64_t seed, std::uint64_t stream,
                                       std::uint64_t index) noexcept {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

// Stream tags keep the different consumers of one seed apart.
namespace stream {
inline constexpr std::uint64_t init = 0x01;
inline constexpr std::uint64_t train = 0x02;
inline constexpr std::uint64_t zigzag = 0x03;
inline constexpr std::uint64_t inversion = 0x04;
inline constexpr std::uint64_t inpaint = 0x05;
inline constexpr std::uint64_t dataset = 0x06;
inline constexpr std::uint64_t projection = 0x07;
inline constexpr std::uint64_t noise = 0x08;
inline constexpr std::uint64_t probe = 0x09;
}  // namespace stream

/// SplitMix64 as a UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t state = 0) noexcept : state_(state) {}
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) noexcept
      : state_(mix_key(seed, stream, index)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double normal() {
    return normal_(*this);
  }

  /// Fills `v` with independent standard normal entries.
  template <typename Derived>
  void fill_normal(Eigen::DenseBase<Derived>& v) {
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, j) = normal();
  }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// A dim x n matrix whose column j is drawn from stream (seed, tag, j).
inline Eigen::MatrixXd column_normals(Eigen::Index dim, Eigen::Index n, std::uint64_t seed,
                                      std::uint64_t tag) {
  Eigen::MatrixXd out(dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Rng rng(seed, tag, static_cast<std::uint64_t>(j));
    for (Eigen::Index i = 0; i < dim; ++i) out(i, j) = rng.normal();
  }
  return out;
}

}  // namespace bcm
