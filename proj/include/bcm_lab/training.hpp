#pragma once

// Bidirectional consistency training: CT term + soft trajectory term with
// stop-gradient branches, Pseudo-Huber distance, Adam with linear warmup,
// and an EMA shadow of the online weights.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "bcm_lab/csv.hpp"
#include "bcm_lab/network.hpp"
#include "bcm_lab/oracle.hpp"
#include "bcm_lab/rng.hpp"
#include "bcm_lab/schedules.hpp"

namespace bcm {

/// Thrown when a loss or parameter turns non-finite. `snapshot` is CSV text of
/// the offending batch.
class NumericAbort : public std::runtime_error {
 public:
  NumericAbort(const std::string& what, std::string snapshot)
      : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
  const std::string& snapshot() const noexcept { return snapshot_; }

 private:
  std::string snapshot_;
};

enum class LossVariant { full_bct, noised_target_ablation, no_ct_ablation };

inline std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::full_bct: return "full_bct";
    case LossVariant::noised_target_ablation: return "noised_target_ablation";
    case LossVariant::no_ct_ablation: return "no_ct_ablation";
  }
  return "?";
}

inline LossVariant parse_loss_variant(const std::string& s) {
  if (s == "full_bct") return LossVariant::full_bct;
  if (s == "noised_target_ablation") return LossVariant::noised_target_ablation;
  if (s == "no_ct_ablation") return LossVariant::no_ct_ablation;
  throw std::invalid_argument("unknown loss_variant '" + s + "'");
}

struct TrainConfig {
  std::int64_t total_iters = 0;
  int batch_size = 256;
  double lr = 1e-4;
  int warmup_iters = 100;
  int s0 = 10;
  int s1 = 1280;
  double p_mean = -1.1;
  double p_std = 2.0;
  double mu_ema = 0.99993;
  double huber_c_factor = 0.00054;
  double sigma_data = 0.5;
  double t_min = 0.002;
  double t_max = 80.0;
  double rho = 7.0;
  LossVariant loss_variant = LossVariant::full_bct;
  std::uint64_t seed = 0;
  std::string dataset = "single_gaussian";
  std::string data_csv;  // optional: train on a fixed sample set instead
  Arch arch;
};

inline void validate(const TrainConfig& c) {
  if (c.total_iters < 0) throw std::invalid_argument("total_iters must be >= 0");
  if (c.batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(c.lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (c.warmup_iters < 0) throw std::invalid_argument("warmup_iters must be >= 0");
  if (c.s0 < 1 || c.s1 < c.s0) throw std::invalid_argument("need 1 <= s0 <= s1");
  if (!(c.p_std > 0.0)) throw std::invalid_argument("p_std must be > 0");
  if (!(c.mu_ema >= 0.0 && c.mu_ema < 1.0)) throw std::invalid_argument("mu_ema must be in [0, 1)");
  if (!(c.huber_c_factor > 0.0)) throw std::invalid_argument("huber_c_factor must be > 0");
  if (!(c.sigma_data > 0.0)) throw std::invalid_argument("sigma_data must be > 0");
  if (!(c.t_min > 0.0) || !(c.t_max > c.t_min)) throw std::invalid_argument("need 0 < t_min < t_max");
  if (!(c.rho > 0.0)) throw std::invalid_argument("rho must be > 0");
  validate(c.arch);
}

// ---------------------------------------------------------------------------
// Config files: flat key=value lines, '#' comments, unknown keys rejected.

namespace detail {

struct ConfigField {
  bool required;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config key '" + key + "': not a number: " + v);
  return out;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config key '" + key + "': not an integer: " + v);
  return out;
}

inline const std::map<std::string, ConfigField>& config_fields() {
  using C = TrainConfig;
  using S = const std::string&;
  static const std::map<std::string, ConfigField> fields = [] {
    std::map<std::string, ConfigField> f;
    auto dbl = [&f](const char* key, bool req, double C::*m) {
      f[key] = {req, [m, key](C& c, S v) { c.*m = parse_double(key, v); },
                [m](const C& c) { return fmt_double(c.*m); }};
    };
    auto integer = [&f](const char* key, bool req, int C::*m) {
      f[key] = {req, [m, key](C& c, S v) { c.*m = static_cast<int>(parse_int(key, v)); },
                [m](const C& c) { return std::to_string(c.*m); }};
    };
    auto arch_int = [&f](const char* key, int Arch::*m) {
      f[key] = {false, [m, key](C& c, S v) { c.arch.*m = static_cast<int>(parse_int(key, v)); },
                [m](const C& c) { return std::to_string(c.arch.*m); }};
    };
    auto arch_dbl = [&f](const char* key, double Arch::*m) {
      f[key] = {false, [m, key](C& c, S v) { c.arch.*m = parse_double(key, v); },
                [m](const C& c) { return fmt_double(c.arch.*m); }};
    };
    f["total_iters"] = {true, [](C& c, S v) { c.total_iters = parse_int("total_iters", v); },
                        [](const C& c) { return std::to_string(c.total_iters); }};
    f["seed"] = {true, [](C& c, S v) { c.seed = static_cast<std::uint64_t>(parse_int("seed", v)); },
                 [](const C& c) { return std::to_string(c.seed); }};
    f["dataset"] = {true, [](C& c, S v) { c.dataset = v; }, [](const C& c) { return c.dataset; }};
    f["data_csv"] = {false, [](C& c, S v) { c.data_csv = v; }, [](const C& c) { return c.data_csv; }};
    f["loss_variant"] = {false, [](C& c, S v) { c.loss_variant = parse_loss_variant(v); },
                         [](const C& c) { return to_string(c.loss_variant); }};
    f["activation"] = {false, [](C& c, S v) { c.arch.activation = v; },
                       [](const C& c) { return c.arch.activation; }};
    integer("batch_size", true, &C::batch_size);
    dbl("lr", true, &C::lr);
    integer("warmup_iters", false, &C::warmup_iters);
    integer("s0", false, &C::s0);
    integer("s1", false, &C::s1);
    dbl("p_mean", false, &C::p_mean);
    dbl("p_std", false, &C::p_std);
    dbl("mu_ema", false, &C::mu_ema);
    dbl("huber_c_factor", false, &C::huber_c_factor);
    dbl("sigma_data", false, &C::sigma_data);
    dbl("t_min", false, &C::t_min);
    dbl("t_max", false, &C::t_max);
    dbl("rho", false, &C::rho);
    arch_int("width", &Arch::width);
    arch_int("depth", &Arch::depth);
    arch_int("n_freqs", &Arch::n_freqs);
    arch_int("emb_width", &Arch::emb_width);
    arch_dbl("freq_min", &Arch::freq_min);
    arch_dbl("freq_max", &Arch::freq_max);
    return f;
  }();
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses a key=value config. Every problem (unknown key, missing required
/// key, bad value) is collected and reported together.
inline TrainConfig parse_config(const std::string& text) {
  const auto& fields = detail::config_fields();
  TrainConfig cfg;
  std::set<std::string> seen;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = fields.find(key);
    if (it == fields.end()) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    if (!seen.insert(key).second) {
      problems.push_back("duplicate key '" + key + "'");
      continue;
    }
    try {
      it->second.set(cfg, value);
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  for (const auto& [key, field] : fields)
    if (field.required && !seen.count(key)) problems.push_back("missing required key '" + key + "'");
  if (problems.empty()) {
    try {
      validate(cfg);
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::invalid_argument(msg);
  }
  return cfg;
}

/// Every field, one key=value per line, in key order. parse_config round-trips it.
inline std::string to_config_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) {
    const std::string v = field.get(cfg);
    if (v.empty()) continue;
    out += key + "=" + v + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distance and loss terms.

inline double huber_constant(double factor, int dim) { return factor * std::sqrt(static_cast<double>(dim)); }

/// sqrt(|a - b|^2 + c^2) - c with c = 0.00054 sqrt(dim).
inline double pseudo_huber(const Vector& a, const Vector& b, int dim, double c_factor = 0.00054) {
  if (a.size() != b.size()) throw std::invalid_argument("pseudo_huber: dimension mismatch");
  const double c = huber_constant(c_factor, dim);
  return std::sqrt((a - b).squaredNorm() + c * c) - c;
}

/// Value of the CT term for any pair of consistency functions model(x, t, u).
template <typename Model, typename StopModel>
double ct_loss(const Model& f, const StopModel& f_bar, const Vector& x, const Vector& z, double t_n,
               double t_next, double lambda, double c_factor = 0.00054) {
  const Matrix a = f(Matrix(x + t_next * z), t_next, 0.0);
  const Matrix r = f_bar(Matrix(x + t_n * z), t_n, 0.0);
  return lambda * pseudo_huber(a.col(0), r.col(0), static_cast<int>(x.size()), c_factor);
}

/// Value of the soft trajectory term. With `two_trajectory` the reference is
/// f_bar(x + t' z, t', 0) instead of f_bar(x + t_n z, t_n, 0).
template <typename Model, typename StopModel>
double st_loss(const Model& f, const StopModel& f_bar, const Vector& x, const Vector& z, double t_n,
               double t_prime, double lambda_prime, double c_factor = 0.00054,
               bool two_trajectory = false) {
  const Matrix x_t = x + t_n * z;
  const Matrix moved = f(x_t, t_n, t_prime);
  const Matrix back = f_bar(moved, t_prime, 0.0);
  const Matrix ref = two_trajectory ? f_bar(Matrix(x + t_prime * z), t_prime, 0.0) : f_bar(x_t, t_n, 0.0);
  return lambda_prime * pseudo_huber(back.col(0), ref.col(0), static_cast<int>(x.size()), c_factor);
}

struct LossBreakdown {
  double ct_term = 0.0;
  double st_term = 0.0;
  double total = 0.0;
};

/// One block of training examples, one per column.
struct TrainBatch {
  Matrix x;
  Matrix z;
  Vector t_n, t_next, t_prime;
  std::vector<int> n, n_prime;

  Eigen::Index size() const noexcept { return x.cols(); }

  TrainBatch block(Eigen::Index start, Eigen::Index len) const {
    TrainBatch b{x.middleCols(start, len), z.middleCols(start, len), t_n.segment(start, len),
                 t_next.segment(start, len), t_prime.segment(start, len), {}, {}};
    b.n.assign(n.begin() + start, n.begin() + start + len);
    b.n_prime.assign(n_prime.begin() + start, n_prime.begin() + start + len);
    return b;
  }
};

/// Sums (not means) of the loss terms over `batch`. Gradients of
/// grad_scale * (summed objective) w.r.t. `theta` are added to `tape`.
/// `theta_bar` is only ever evaluated, never differentiated: its branches
/// contribute input gradients at most.
inline LossBreakdown bct_loss_sum(const ModelParams& theta, const ModelParams& theta_bar,
                                  const TrainBatch& batch, LossVariant variant, double c_factor,
                                  GradientTape* tape = nullptr, double grad_scale = 1.0) {
  const Eigen::Index bs = batch.size();
  const int dim = theta.arch.dim;
  const double c = huber_constant(c_factor, dim);
  const Vector zeros = Vector::Zero(bs);
  const Matrix x_n = batch.x + batch.z * batch.t_n.asDiagonal();

  ForwardCache ct_cache, move_cache, back_cache;
  const bool with_ct_grad = variant != LossVariant::no_ct_ablation;

  const Matrix ref_n = consistency(theta_bar, x_n, batch.t_n, zeros);
  const Matrix x_next = batch.x + batch.z * batch.t_next.asDiagonal();
  const Matrix ct_out = consistency(theta, x_next, batch.t_next, zeros, with_ct_grad ? &ct_cache : nullptr);
  const Matrix moved = consistency(theta, x_n, batch.t_n, batch.t_prime, &move_cache);
  const Matrix back = consistency(theta_bar, moved, batch.t_prime, zeros, &back_cache);
  Matrix st_ref;
  if (variant == LossVariant::noised_target_ablation) {
    const Matrix x_prime = batch.x + batch.z * batch.t_prime.asDiagonal();
    st_ref = consistency(theta_bar, x_prime, batch.t_prime, zeros);
  }
  const Matrix& ref_st = variant == LossVariant::noised_target_ablation ? st_ref : ref_n;

  LossBreakdown sum;
  Matrix d_ct(dim, bs), d_back(dim, bs);
  for (Eigen::Index j = 0; j < bs; ++j) {
    const double lam = weights(batch.t_n[j], batch.t_next[j]);
    const double lam_p = weights(batch.t_n[j], batch.t_prime[j]);
    const Vector diff_ct = ct_out.col(j) - ref_n.col(j);
    const Vector diff_st = back.col(j) - ref_st.col(j);
    const double r_ct = std::sqrt(diff_ct.squaredNorm() + c * c);
    const double r_st = std::sqrt(diff_st.squaredNorm() + c * c);
    sum.ct_term += lam * (r_ct - c);
    sum.st_term += lam_p * (r_st - c);
    d_ct.col(j) = (grad_scale * lam / r_ct) * diff_ct;
    d_back.col(j) = (grad_scale * lam_p / r_st) * diff_st;
  }
  sum.total = variant == LossVariant::no_ct_ablation ? sum.st_term : sum.ct_term + sum.st_term;

  if (tape) {
    if (with_ct_grad) consistency_backward(theta, ct_cache, d_ct, tape);
    Matrix d_moved;
    consistency_backward(theta_bar, back_cache, d_back, nullptr, &d_moved);
    consistency_backward(theta, move_cache, d_moved, tape);
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Optimizer and EMA.

struct AdamState {
  ParamVector m, v;
  std::int64_t steps = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_update(ParamVector& params, const ParamVector& grads, AdamState& s,
                        double lr, const AdamOptions& o = {}) {
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  ++s.steps;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.steps));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = o.beta1 * s.m[i] + (1.0 - o.beta1) * grads[i];
    s.v[i] = o.beta2 * s.v[i] + (1.0 - o.beta2) * grads[i] * grads[i];
    params[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + o.eps);
  }
}

/// theta_ema <- mu theta_ema + (1 - mu) theta, written as a lerp so mu = 0
/// copies theta and an EMA equal to theta stays put.
inline void ema_update(ParamVector& ema, const ParamVector& online, double mu) {
  for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = std::lerp(online[i], ema[i], mu);
}

// ---------------------------------------------------------------------------
// Training loop.

/// Where training examples come from: a density or a fixed sample set.
struct TrainingData {
  std::optional<MixtureDensity> density;
  Matrix samples;  // dim x n, used when density is empty

  int dim() const { return density ? density->dim() : static_cast<int>(samples.rows()); }

  void draw(Rng& rng, Eigen::Ref<Vector> out) const {
    if (density) {
      const auto& d = *density;
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
      for (int k = 0; k < d.dim(); ++k) out[k] = d.means(k, c) + std::sqrt(d.component_var[k]) * rng.normal();
    } else {
      const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(samples.cols()));
      out = samples.col(j);
    }
  }
};

/// Worker cap from BCM_LAB_THREADS (default: hardware concurrency).
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BCM_LAB_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct TrainState {
  TrainConfig config;
  ModelParams params;
  ModelParams ema;
  AdamState adam;
  std::map<int, std::pair<TimeGrid, NoisePmf>> schedule_cache;

  const std::pair<TimeGrid, NoisePmf>& schedule_for(int n_points) {
    auto it = schedule_cache.find(n_points);
    if (it == schedule_cache.end()) {
      TimeGrid g = build_grid(config.t_min, config.t_max, n_points, config.rho);
      NoisePmf p = noise_pmf(g, config.p_mean, config.p_std);
      it = schedule_cache.emplace(n_points, std::make_pair(std::move(g), std::move(p))).first;
    }
    return it->second;
  }

  StepSchedule step_schedule() const { return {config.s0, config.s1, config.total_iters}; }
};

inline TrainState init_train_state(const TrainConfig& cfg, int dim) {
  validate(cfg);
  TrainConfig c = cfg;
  c.arch.dim = dim;
  TrainState s{c, init_params(c.arch, c.sigma_data, c.seed), {}, {}, {}};
  s.ema = s.params;
  return s;
}

/// Examples for iteration k: example i uses stream (seed ^ k, train, i).
inline TrainBatch sample_train_batch(TrainState& state, const TrainingData& data, std::int64_t k) {
  const int n_points = step_count(k, state.step_schedule());
  const auto& [grid, pmf] = state.schedule_for(n_points);
  const int bs = state.config.batch_size;
  const int dim = state.params.arch.dim;
  TrainBatch b{Matrix(dim, bs), Matrix(dim, bs), Vector(bs), Vector(bs), Vector(bs),
               std::vector<int>(static_cast<std::size_t>(bs)), std::vector<int>(static_cast<std::size_t>(bs))};
  const std::uint64_t iter_seed = mix_key(state.config.seed, stream::train, static_cast<std::uint64_t>(k));
  for (int i = 0; i < bs; ++i) {
    Rng rng(iter_seed, stream::train, static_cast<std::uint64_t>(i));
    data.draw(rng, b.x.col(i));
    const IndexPair pair = sample_index_pair(pmf, rng);
    b.n[static_cast<std::size_t>(i)] = pair.n;
    b.n_prime[static_cast<std::size_t>(i)] = pair.n_prime;
    b.t_n[i] = grid[static_cast<std::size_t>(pair.n - 1)];
    b.t_next[i] = grid[static_cast<std::size_t>(pair.n)];
    b.t_prime[i] = grid[static_cast<std::size_t>(pair.n_prime - 1)];
    for (int d = 0; d < dim; ++d) b.z(d, i) = rng.normal();
  }
  return b;
}

inline std::string batch_snapshot(const TrainBatch& b) {
  std::ostringstream os;
  os.precision(17);
  os << "n,n_prime,t_n,t_next,t_prime";
  for (Eigen::Index d = 0; d < b.x.rows(); ++d) os << ",x" << d;
  for (Eigen::Index d = 0; d < b.z.rows(); ++d) os << ",z" << d;
  os << '\n';
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    os << b.n[static_cast<std::size_t>(j)] << ',' << b.n_prime[static_cast<std::size_t>(j)] << ','
       << b.t_n[j] << ',' << b.t_next[j] << ',' << b.t_prime[j];
    for (Eigen::Index d = 0; d < b.x.rows(); ++d) os << ',' << b.x(d, j);
    for (Eigen::Index d = 0; d < b.z.rows(); ++d) os << ',' << b.z(d, j);
    os << '\n';
  }
  return os.str();
}

inline constexpr Eigen::Index kTrainBlock = 64;

/// Batch-mean loss and its gradient. Blocks of kTrainBlock examples get
/// private tapes that are summed in block order, so the result does not
/// depend on the number of workers.
inline LossBreakdown loss_and_gradient(const ModelParams& theta, const ModelParams& theta_bar,
                                       const TrainBatch& batch, LossVariant variant, double c_factor,
                                       GradientTape& tape, unsigned workers) {
  const Eigen::Index bs = batch.size();
  const auto n_blocks = static_cast<std::size_t>((bs + kTrainBlock - 1) / kTrainBlock);
  std::vector<GradientTape> tapes(n_blocks, GradientTape(theta));
  std::vector<LossBreakdown> sums(n_blocks);
  const double scale = 1.0 / static_cast<double>(bs);
  parallel_for(n_blocks, workers, [&](std::size_t i) {
    const Eigen::Index start = static_cast<Eigen::Index>(i) * kTrainBlock;
    const Eigen::Index len = std::min(kTrainBlock, bs - start);
    sums[i] = bct_loss_sum(theta, theta_bar, batch.block(start, len), variant, c_factor, &tapes[i], scale);
  });
  tape = GradientTape(theta);
  LossBreakdown out;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    tape += tapes[i];
    out.ct_term += sums[i].ct_term;
    out.st_term += sums[i].st_term;
    out.total += sums[i].total;
  }
  out.ct_term *= scale;
  out.st_term *= scale;
  out.total *= scale;
  return out;
}

/// Batch-mean loss only.
inline LossBreakdown evaluate_loss(const ModelParams& theta, const TrainBatch& batch, LossVariant variant,
                                   double c_factor) {
  LossBreakdown s = bct_loss_sum(theta, theta, batch, variant, c_factor);
  const double scale = 1.0 / static_cast<double>(batch.size());
  return {s.ct_term * scale, s.st_term * scale, s.total * scale};
}

struct StepRecord {
  std::int64_t k = 0;
  int n_points = 0;
  LossBreakdown loss;
};

/// One iteration: sample, differentiate, Adam step on theta, then the EMA update.
inline StepRecord train_step(TrainState& state, const TrainingData& data, std::int64_t k,
                             unsigned workers = worker_count()) {
  if (k < 0 || k >= state.config.total_iters) throw std::invalid_argument("train_step: k out of range");
  const TrainBatch batch = sample_train_batch(state, data, k);
  GradientTape tape;
  const LossBreakdown loss = loss_and_gradient(state.params, state.params, batch, state.config.loss_variant,
                                               state.config.huber_c_factor, tape, workers);
  if (!std::isfinite(loss.total))
    throw NumericAbort("non-finite loss at iteration " + std::to_string(k), batch_snapshot(batch));
  const double warm = state.config.warmup_iters > 0
                          ? std::min(1.0, static_cast<double>(k + 1) / state.config.warmup_iters)
                          : 1.0;
  adam_update(state.params.values, tape.grads, state.adam, state.config.lr * warm);
  if (!state.params.all_finite())
    throw NumericAbort("non-finite parameters after iteration " + std::to_string(k), batch_snapshot(batch));
  ema_update(state.ema.values, state.params.values, state.config.mu_ema);
  return {k, step_count(k, state.step_schedule()), loss};
}

struct TrainResult {
  ModelParams ema;
  ModelParams online;
  std::vector<StepRecord> log;
};

/// The named density, or the sample set in cfg.data_csv when that is set.
inline TrainingData training_data_for(const TrainConfig& cfg) {
  if (!cfg.data_csv.empty()) {
    Matrix x = read_samples_csv(std::filesystem::path(cfg.data_csv));
    if (x.cols() == 0) throw std::invalid_argument("data_csv has no samples: " + cfg.data_csv);
    return {std::nullopt, std::move(x)};
  }
  return {datasets::by_name(cfg.dataset, cfg.sigma_data), Matrix()};
}

/// K iterations of train_step; returns the EMA weights (used for all
/// inference) along with the online weights and the per-step loss log.
inline TrainResult run_training(const TrainConfig& cfg, const TrainingData& data,
                                const std::function<void(const StepRecord&)>& on_step = {}) {
  TrainState state = init_train_state(cfg, data.dim());
  const unsigned workers = worker_count();
  std::vector<StepRecord> log;
  log.reserve(static_cast<std::size_t>(cfg.total_iters));
  for (std::int64_t k = 0; k < cfg.total_iters; ++k) {
    log.push_back(train_step(state, data, k, workers));
    if (on_step) on_step(log.back());
  }
  return {std::move(state.ema), std::move(state.params), std::move(log)};
}

inline void write_loss_csv(std::ostream& os, const std::vector<StepRecord>& log) {
  os << "k,N_k,ct,st,total\n";
  os.precision(17);
  for (const auto& r : log)
    os << r.k << ',' << r.n_points << ',' << r.loss.ct_term << ',' << r.loss.st_term << ',' << r.loss.total << '\n';
}

}  // namespace bcm
