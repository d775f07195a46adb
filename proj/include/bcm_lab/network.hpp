#pragma once

// The raw network F(x, t, u): a dense SiLU stack fed with the scaled state and
// a projected Fourier embedding of (log t, log u). Reverse mode is written out
// by hand; a ForwardCache records what backward needs.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcm_lab/parameterization.hpp"
#include "bcm_lab/rng.hpp"

namespace bcm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Arch {
  int dim = 2;
  int width = 128;
  int depth = 3;  // hidden layers in the trunk
  int n_freqs = 16;
  int emb_width = 64;
  double freq_min = 0.05;
  double freq_max = 4.0;
  std::string activation = "silu";

  friend bool operator==(const Arch&, const Arch&) = default;
};

inline void validate(const Arch& a) {
  if (a.dim < 1 || a.width < 1 || a.depth < 1 || a.n_freqs < 1 || a.emb_width < 1)
    throw std::invalid_argument("arch: all sizes must be positive");
  if (!(a.freq_min > 0.0) || !(a.freq_max >= a.freq_min))
    throw std::invalid_argument("arch: need 0 < freq_min <= freq_max");
  if (a.activation != "silu" && a.activation != "tanh")
    throw std::invalid_argument("arch: unknown activation '" + a.activation + "'");
}

struct TimeEmbedding {
  int n_freqs = 16;
  double freq_min = 0.05;
  double freq_max = 4.0;

  static constexpr double kTimeFloor = 1e-8;

  static double log_time(double t) { return std::log(t + kTimeFloor); }

  double frequency(int k) const {
    if (n_freqs == 1) return freq_min;
    return freq_min * std::pow(freq_max / freq_min, static_cast<double>(k) / (n_freqs - 1));
  }

  /// [cos(w_k g) ..., sin(w_k g) ...] for a log-time feature g.
  void encode(double g, double* out) const {
    for (int k = 0; k < n_freqs; ++k) {
      const double a = frequency(k) * g;
      out[k] = std::cos(a);
      out[n_freqs + k] = std::sin(a);
    }
  }

  Vector encode(double g) const {
    Vector v(2 * n_freqs);
    encode(g, v.data());
    return v;
  }

  int width() const noexcept { return 4 * n_freqs; }
};

inline TimeEmbedding time_embedding(const Arch& a) { return {a.n_freqs, a.freq_min, a.freq_max}; }

/// Concatenation [emb(t), emb(u)], length 4 * n_freqs.
inline Vector embed_times(double t, double u, const TimeEmbedding& emb) {
  if (t < 0.0 || u < 0.0) throw std::invalid_argument("embed_times: times must be >= 0");
  Vector v(emb.width());
  emb.encode(TimeEmbedding::log_time(t), v.data());
  emb.encode(TimeEmbedding::log_time(u), v.data() + 2 * emb.n_freqs);
  return v;
}

struct LayerShape {
  int out = 0;
  int in = 0;
  std::size_t weight_offset = 0;  // column-major out x in
  std::size_t bias_offset = 0;
};

/// Declaration order: embedding projection, trunk input, hidden layers, output.
inline std::vector<LayerShape> layer_shapes(const Arch& a) {
  std::vector<std::pair<int, int>> dims;
  dims.emplace_back(a.emb_width, 4 * a.n_freqs);
  dims.emplace_back(a.width, a.dim + a.emb_width);
  for (int i = 1; i < a.depth; ++i) dims.emplace_back(a.width, a.width);
  dims.emplace_back(a.dim, a.width);

  std::vector<LayerShape> shapes;
  std::size_t off = 0;
  for (auto [out, in] : dims) {
    LayerShape s{out, in, off, 0};
    off += static_cast<std::size_t>(out) * in;
    s.bias_offset = off;
    off += static_cast<std::size_t>(out);
    shapes.push_back(s);
  }
  return shapes;
}

inline std::size_t param_count(const Arch& a) {
  const auto shapes = layer_shapes(a);
  const auto& last = shapes.back();
  return last.bias_offset + static_cast<std::size_t>(last.out);
}

// Parameter storage. The fixed base alignment keeps Eigen's vectorized
// kernels on the same code path from run to run, which bitwise
// reproducibility depends on.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelParams {
  Arch arch;
  double sigma_data = 0.5;
  ParamVector values;

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Per-parameter gradient accumulators, laid out like ModelParams::values.
struct GradientTape {
  ParamVector grads;

  GradientTape() = default;
  explicit GradientTape(const ModelParams& p) : grads(p.values.size(), 0.0) {}

  void zero() { std::fill(grads.begin(), grads.end(), 0.0); }

  GradientTape& operator+=(const GradientTape& other) {
    if (other.grads.size() != grads.size()) throw std::invalid_argument("tape shape mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += other.grads[i];
    return *this;
  }
};

/// Fan-in scaled normal weights, zero biases, zero output layer.
inline ModelParams init_params(const Arch& arch, double sigma_data, std::uint64_t seed) {
  validate(arch);
  if (!(sigma_data > 0.0)) throw std::invalid_argument("init_params: sigma_data must be > 0");
  ModelParams p{arch, sigma_data, ParamVector(param_count(arch), 0.0)};
  const auto shapes = layer_shapes(arch);
  Rng rng(seed, stream::init);
  for (std::size_t l = 0; l + 1 < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.out) * s.in; ++i)
      p.values[s.weight_offset + i] = scale * rng.normal();
  }
  return p;
}

namespace detail {

using ConstMatMap = Eigen::Map<const Matrix>;
using MatMap = Eigen::Map<Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using VecMap = Eigen::Map<Vector>;

inline ConstMatMap weight(const ModelParams& p, const LayerShape& s) {
  return {p.values.data() + s.weight_offset, s.out, s.in};
}
inline ConstVecMap bias(const ModelParams& p, const LayerShape& s) {
  return {p.values.data() + s.bias_offset, s.out};
}
inline MatMap weight_grad(GradientTape& g, const LayerShape& s) {
  return {g.grads.data() + s.weight_offset, s.out, s.in};
}
inline VecMap bias_grad(GradientTape& g, const LayerShape& s) {
  return {g.grads.data() + s.bias_offset, s.out};
}

inline bool is_silu(const Arch& a) { return a.activation == "silu"; }

inline void activate(const Arch& a, const Matrix& z, Matrix& out) {
  if (is_silu(a))
    out = z.array() / (1.0 + (-z.array()).exp());
  else
    out = z.array().tanh();
}

inline void activation_backward(const Arch& a, const Matrix& z, Matrix& grad) {
  if (is_silu(a)) {
    const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-z.array()).exp());
    grad.array() *= sig * (1.0 + z.array() * (1.0 - sig));
  } else {
    grad.array() *= 1.0 - z.array().tanh().square();
  }
}

}  // namespace detail

/// Activations recorded by a forward pass.
struct ForwardCache {
  bool recorded = false;
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of every non-output layer
  Vector c_in, c_out, c_skip;  // per column, set by the consistency wrapper
};

/// Embedding matrix (4 n_freqs) x batch for per-column (t, u).
inline Matrix embed_batch(const Arch& arch, const Vector& t, const Vector& u) {
  const TimeEmbedding emb = time_embedding(arch);
  Matrix e(emb.width(), t.size());
  for (Eigen::Index j = 0; j < t.size(); ++j) e.col(j) = embed_times(t[j], u[j], emb);
  return e;
}

/// F(x_in, t, u) for a batch laid out one sample per column.
inline Matrix forward(const ModelParams& p, const Matrix& x_in, const Vector& t, const Vector& u,
                      ForwardCache* cache = nullptr) {
  const Arch& a = p.arch;
  if (x_in.rows() != a.dim) throw std::invalid_argument("forward: input dimension mismatch");
  if (t.size() != x_in.cols() || u.size() != x_in.cols())
    throw std::invalid_argument("forward: time vectors must match batch size");
  const auto shapes = layer_shapes(a);
  const Eigen::Index batch = x_in.cols();

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.inputs.assign(shapes.size(), Matrix());
  c.pre.assign(shapes.size() - 1, Matrix());

  c.inputs[0] = embed_batch(a, t, u);
  c.pre[0].noalias() = detail::weight(p, shapes[0]) * c.inputs[0];
  c.pre[0].colwise() += detail::bias(p, shapes[0]);
  Matrix act;
  detail::activate(a, c.pre[0], act);

  c.inputs[1].resize(a.dim + a.emb_width, batch);
  c.inputs[1].topRows(a.dim) = x_in;
  c.inputs[1].bottomRows(a.emb_width) = act;

  for (std::size_t l = 1; l + 1 < shapes.size(); ++l) {
    c.pre[l].noalias() = detail::weight(p, shapes[l]) * c.inputs[l];
    c.pre[l].colwise() += detail::bias(p, shapes[l]);
    detail::activate(a, c.pre[l], c.inputs[l + 1]);
  }
  const auto& out = shapes.back();
  Matrix y = detail::weight(p, out) * c.inputs.back();
  y.colwise() += detail::bias(p, out);
  c.recorded = cache != nullptr;
  return y;
}

/// Accumulates dL/dtheta into `tape` (if given) and writes dL/dx_in into
/// `grad_in` (if given). Passing no tape is how stop-gradient branches run.
inline void backward(const ModelParams& p, const ForwardCache& cache, const Matrix& upstream,
                     GradientTape* tape, Matrix* grad_in = nullptr) {
  if (!cache.recorded) throw std::logic_error("backward: no recorded forward pass");
  const Arch& a = p.arch;
  const auto shapes = layer_shapes(a);
  if (tape && tape->grads.size() != p.values.size())
    throw std::invalid_argument("backward: tape shape mismatch");
  if (upstream.rows() != a.dim || upstream.cols() != cache.inputs.back().cols())
    throw std::invalid_argument("backward: upstream gradient shape mismatch");

  Matrix delta = upstream;
  for (std::size_t l = shapes.size() - 1; l >= 1; --l) {
    const auto& s = shapes[l];
    if (tape) {
      detail::weight_grad(*tape, s).noalias() += delta * cache.inputs[l].transpose();
      detail::bias_grad(*tape, s) += delta.rowwise().sum();
    }
    Matrix below = detail::weight(p, s).transpose() * delta;
    if (l == 1) {
      if (grad_in) *grad_in = below.topRows(a.dim);
      if (!tape) return;
      delta = below.bottomRows(a.emb_width);
    } else {
      delta = std::move(below);
    }
    detail::activation_backward(a, cache.pre[l - 1], delta);
  }
  const auto& s0 = shapes[0];
  detail::weight_grad(*tape, s0).noalias() += delta * cache.inputs[0].transpose();
  detail::bias_grad(*tape, s0) += delta.rowwise().sum();
}

/// Applies the skip/output parameterization around any raw network
/// `raw(x_in, t, u) -> Matrix`. Columns with c_out == 0 return x_t untouched.
template <typename Raw>
Matrix wrap_model(Raw&& raw, const Matrix& x_t, const Vector& t, const Vector& u,
                  double sigma_data, ForwardCache* coeff_sink = nullptr) {
  const Eigen::Index batch = x_t.cols();
  if (t.size() != batch || u.size() != batch)
    throw std::invalid_argument("wrap_model: time vectors must match batch size");
  Vector c_in(batch), c_out(batch), c_skip(batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const CoeffTriple c = coeffs(t[j], u[j], sigma_data);
    c_in[j] = c.c_in;
    c_out[j] = c.c_out;
    c_skip[j] = c.c_skip;
  }
  const Matrix x_in = x_t * c_in.asDiagonal();
  const Matrix raw_out = raw(x_in, t, u);
  if (raw_out.rows() != x_t.rows() || raw_out.cols() != batch)
    throw std::invalid_argument("wrap_model: raw network output shape mismatch");
  Matrix f = x_t * c_skip.asDiagonal();
  for (Eigen::Index j = 0; j < batch; ++j)
    if (c_out[j] != 0.0) f.col(j) += c_out[j] * raw_out.col(j);
  if (coeff_sink) {
    coeff_sink->c_in = std::move(c_in);
    coeff_sink->c_out = std::move(c_out);
    coeff_sink->c_skip = std::move(c_skip);
  }
  return f;
}

/// The consistency function f_theta(x_t, t, u) with per-column times.
inline Matrix consistency(const ModelParams& p, const Matrix& x_t, const Vector& t, const Vector& u,
                          ForwardCache* cache = nullptr) {
  if (x_t.rows() != p.arch.dim) throw std::invalid_argument("consistency: dimension mismatch");
  auto raw = [&](const Matrix& x_in, const Vector& tt, const Vector& uu) {
    return forward(p, x_in, tt, uu, cache);
  };
  return wrap_model(raw, x_t, t, u, p.sigma_data, cache);
}

/// Backward through f_theta: upstream dL/df -> parameter grads and dL/dx_t.
inline void consistency_backward(const ModelParams& p, const ForwardCache& cache,
                                 const Matrix& upstream, GradientTape* tape,
                                 Matrix* grad_x = nullptr) {
  const Matrix d_raw = upstream * cache.c_out.asDiagonal();
  if (!grad_x) {
    backward(p, cache, d_raw, tape, nullptr);
    return;
  }
  Matrix d_in;
  backward(p, cache, d_raw, tape, &d_in);
  *grad_x = upstream * cache.c_skip.asDiagonal();
  grad_x->noalias() += d_in * cache.c_in.asDiagonal();
}

/// Inference-time model with shared (t, u) across the batch. Large batches are
/// evaluated in fixed-size column blocks.
class NetworkModel {
 public:
  explicit NetworkModel(const ModelParams& params, Eigen::Index block = 4096)
      : params_(&params), block_(block) {}

  Matrix operator()(const Matrix& x, double t, double u) const {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); j += block_) {
      const Eigen::Index n = std::min(block_, x.cols() - j);
      out.middleCols(j, n) =
          consistency(*params_, x.middleCols(j, n), Vector::Constant(n, t), Vector::Constant(n, u));
    }
    return out;
  }

  const ModelParams& params() const noexcept { return *params_; }

 private:
  const ModelParams* params_;
  Eigen::Index block_;
};

}  // namespace bcm
