#pragma once

// Command-line front end. Each command writes into a fresh run directory
// <out>/<command>-<UTC timestamp>-s<seed> and finishes by writing
// manifest.jsonl there. `rerun --manifest` replays a recorded command into a
// new directory; the outputs come out byte-for-byte the same.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bcm_lab/checkpoint.hpp"
#include "bcm_lab/csv.hpp"
#include "bcm_lab/inversion.hpp"
#include "bcm_lab/network.hpp"
#include "bcm_lab/oracle.hpp"
#include "bcm_lab/samplers.hpp"
#include "bcm_lab/schedules.hpp"
#include "bcm_lab/training.hpp"

#ifndef BCM_LAB_VERSION
#define BCM_LAB_VERSION "0.1.0"
#endif

namespace bcm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string checkpoint;
  std::string plan = "one_step";
  std::string ladder;
  std::string taus;
  std::string eps;
  std::string input;
  std::string dataset;
  std::string metrics = "sw,roundtrip,coverage";
  std::string mask;
  std::string alphas = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::string manifest;
  std::string out = "runs";
  long long n = 1000;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool plan_given = false;
  bool out_given = false;
  double init_scale = 0.5;
  int coverage_points = 1281;
  int projections = 256;
  bool trajectory = false;
  bool plot = false;
  bool quiet = false;
};

/// Comma-separated numbers, e.g. "0.07,6.0,80".
inline std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t pos = 0;
      v.push_back(std::stod(cell, &pos));
      while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
      if (pos != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw UsageError(what + ": not a number: '" + cell + "'");
    }
  }
  if (v.empty()) throw UsageError(what + ": empty list");
  return v;
}

inline std::string format_list(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

/// Run directory, its outputs, and the manifest written at the end.
class Run {
 public:
  Run(std::string command, std::vector<std::string> args, fs::path base, std::uint64_t seed)
      : command_(std::move(command)),
        args_(std::move(args)),
        base_(std::move(base)),
        seed_(seed),
        start_(std::chrono::steady_clock::now()) {}

  /// Created on first use, so a command that fails validation leaves nothing behind.
  const fs::path& dir() {
    if (dir_.empty()) {
      fs::create_directories(base_);
      const std::time_t now = std::time(nullptr);
      std::tm tm{};
      gmtime_r(&now, &tm);
      std::ostringstream name;
      name << command_ << '-' << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << "-s" << seed_;
      fs::path d = base_ / name.str();
      for (int i = 2; !fs::create_directory(d); ++i) d = base_ / (name.str() + "-" + std::to_string(i));
      dir_ = d;
    }
    return dir_;
  }

  json& config() { return config_; }
  void set_checkpoint_crc(std::string crc) { checkpoint_crc_ = std::move(crc); }
  void set_nfe(int nfe) { nfe_ = nfe; }
  void set_status(std::string s) { status_ = std::move(s); }
  void add_record(json j) { records_.push_back(std::move(j)); }

  void write(const std::string& name, const std::string& content) {
    detail::write_file_atomic(dir() / name, content);
    outputs_[name] = crc32_hex(content);
  }

  /// Registers a file some other routine already wrote into the run directory.
  void adopt(const std::string& name) { outputs_[name] = file_crc32(dir() / name); }

  void finish() {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json head;
    head["command"] = command_;
    head["args"] = args_;
    head["config"] = config_;
    head["seed"] = seed_;
    head["checkpoint_crc32"] = checkpoint_crc_;
    head["version"] = BCM_LAB_VERSION;
    head["duration_s"] = secs;
    head["status"] = status_;
    if (nfe_ >= 0) head["nfe"] = nfe_;
    head["outputs"] = outputs_;
    std::string text = head.dump() + "\n";
    for (auto& r : records_) text += r.dump() + "\n";
    detail::write_file_atomic(dir() / "manifest.jsonl", text);
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  fs::path base_;
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
  fs::path dir_;
  json config_ = json::object();
  json outputs_ = json::object();
  std::string checkpoint_crc_;
  std::string status_ = "ok";
  std::vector<json> records_;
  int nfe_ = -1;
};

namespace detail {

inline std::string to_csv(const Matrix& x) {
  std::ostringstream os;
  write_samples_csv(os, x);
  return os.str();
}

inline void require_finite(const Matrix& x, const std::string& what) {
  if (!x.allFinite()) throw NumericAbort(what + " contains non-finite values", "");
}

/// Loads a checkpoint, refusing on a checksum mismatch.
inline LoadedCheckpoint open_checkpoint(const Options& o, Run& run) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  run.set_checkpoint_crc(ck.crc32);
  run.config()["checkpoint"] = o.checkpoint;
  run.config()["arch"] = {{"dim", ck.params.arch.dim},
                          {"width", ck.params.arch.width},
                          {"depth", ck.params.arch.depth},
                          {"activation", ck.params.arch.activation},
                          {"sigma_data", ck.params.sigma_data}};
  return ck;
}

/// Samples from --input, or n draws of --dataset under --seed.
inline Matrix input_samples(const Options& o, int dim, double sigma_data, Run& run) {
  Matrix x;
  if (!o.input.empty()) {
    x = read_samples_csv(fs::path(o.input));
    run.config()["input"] = o.input;
    run.config()["input_crc32"] = file_crc32(o.input);
  } else if (!o.dataset.empty()) {
    if (o.n < 1) throw UsageError("--n must be >= 1");
    x = sample(datasets::by_name(o.dataset, sigma_data), static_cast<Eigen::Index>(o.n), o.seed);
    run.config()["dataset"] = o.dataset;
    run.config()["n"] = o.n;
  } else {
    throw UsageError("need --input <csv> or --dataset <name>");
  }
  if (x.cols() == 0) throw UsageError("input has no samples");
  if (x.rows() != dim)
    throw UsageError("input has " + std::to_string(x.rows()) + " columns, model expects " + std::to_string(dim));
  return x;
}

inline SamplerPlan make_plan(const std::string& kind_name, const Options& o) {
  const SamplerKind kind = parse_sampler_kind(kind_name);
  const bool has_ladder = !o.ladder.empty();
  SamplerPlan plan;
  switch (kind) {
    case SamplerKind::one_step:
      plan = plans::one_step(has_ladder ? parse_list(o.ladder, "--ladder").front() : 80.0);
      break;
    case SamplerKind::ancestral:
      plan = has_ladder ? plans::ancestral(parse_list(o.ladder, "--ladder")) : plans::ancestral();
      break;
    case SamplerKind::zigzag: {
      plan = plans::zigzag();
      if (has_ladder) plan.zigzag_times = parse_list(o.ladder, "--ladder");
      if (!o.eps.empty()) plan.fresh_noise_scales = parse_list(o.eps, "--eps");
      plan.t_max = plan.zigzag_times.back();
      break;
    }
    case SamplerKind::combined: {
      plan = plans::combined();
      if (has_ladder) plan.ancestral_times = parse_list(o.ladder, "--ladder");
      if (!o.taus.empty()) plan.zigzag_times = parse_list(o.taus, "--taus");
      if (!o.eps.empty()) plan.fresh_noise_scales = parse_list(o.eps, "--eps");
      plan.t_max = plan.ancestral_times.front();
      break;
    }
  }
  plan.seed = o.seed;
  return plan;
}

inline json plan_json(const SamplerPlan& p) {
  return {{"kind", to_string(p.kind)},
          {"t_max", p.t_max},
          {"ancestral_times", p.ancestral_times},
          {"zigzag_times", p.zigzag_times},
          {"fresh_noise_scales", p.fresh_noise_scales},
          {"seed", p.seed}};
}

inline InversionPlan make_ladder(const Options& o, const std::vector<double>& fallback) {
  InversionPlan p{o.ladder.empty() ? fallback : parse_list(o.ladder, "--ladder"), o.seed};
  try {
    validate(p);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns an exit code; numeric problems surface as NumericAbort.

inline int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  if (o.config.empty()) throw UsageError("--config is required");
  std::ifstream in(o.config);
  if (!in) throw UsageError("cannot read config " + o.config);
  std::stringstream text;
  text << in.rdbuf();
  TrainConfig cfg;
  try {
    cfg = parse_config(text.str());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.seed_given) cfg.seed = o.seed;
  if (!cfg.data_csv.empty() && fs::path(cfg.data_csv).is_relative())
    cfg.data_csv = (fs::absolute(o.config).parent_path() / cfg.data_csv).lexically_normal().string();

  Run run("train", args, o.out, cfg.seed);
  const std::string resolved = to_config_text(cfg);
  for (const auto& [key, field] : bcm::detail::config_fields()) run.config()[key] = field.get(cfg);
  if (!cfg.data_csv.empty()) run.config()["data_csv_crc32"] = file_crc32(cfg.data_csv);
  run.write("config.txt", resolved);

  const TrainingData data = training_data_for(cfg);
  const std::int64_t every = std::max<std::int64_t>(1, cfg.total_iters / 10);
  TrainResult res;
  try {
    res = run_training(cfg, data, [&](const StepRecord& r) {
      if (!o.quiet && (r.k % every == 0 || r.k + 1 == cfg.total_iters))
        out << "iter " << r.k << " N=" << r.n_points << " loss=" << r.loss.total << '\n';
    });
  } catch (const NumericAbort& e) {
    run.write("failing_batch.csv", e.snapshot());
    run.set_status(std::string("numeric_abort: ") + e.what());
    run.finish();
    throw;
  }
  std::ostringstream loss;
  write_loss_csv(loss, res.log);
  run.write("loss.csv", loss.str());
  const std::string crc = save_checkpoint(run.dir() / "checkpoint.bin", res.ema);
  run.adopt("checkpoint.bin");
  run.adopt("checkpoint.bin.manifest");
  run.set_checkpoint_crc(crc);
  run.finish();
  out << "checkpoint " << (run.dir() / "checkpoint.bin").string() << " crc32=" << crc << '\n';
  out << "run " << run.dir().string() << '\n';
  return kExitOk;
}

inline int cmd_sample(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Run run("sample", args, o.out, o.seed);
  const auto ck = detail::open_checkpoint(o, run);
  if (o.n < 1) throw UsageError("--n must be >= 1");
  SamplerPlan plan;
  try {
    plan = detail::make_plan(o.plan, o);
    const NetworkModel model(ck.params);
    const Matrix x_T = initial_noise(ck.params.arch.dim, static_cast<Eigen::Index>(o.n), plan.t_max, o.seed);
    run.config()["plan"] = detail::plan_json(plan);
    run.config()["n"] = o.n;
    const Trajectory traj = run_sampler(model, plan, x_T);
    detail::require_finite(traj.final_state(), "samples");
    run.write("samples.csv", detail::to_csv(traj.final_state()));
    if (o.trajectory) {
      std::ostringstream os;
      write_trajectory_csv(os, traj);
      run.write("trajectory.csv", os.str());
    }
    run.set_nfe(traj.nfe);
    run.finish();
    out << "NFE=" << traj.nfe << '\n' << "run " << run.dir().string() << '\n';
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return kExitOk;
}

inline int cmd_invert(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Run run("invert", args, o.out, o.seed);
  const auto ck = detail::open_checkpoint(o, run);
  const Matrix x0 = detail::input_samples(o, ck.params.arch.dim, ck.params.sigma_data, run);
  const InversionPlan plan = detail::make_ladder(o, ladders::nfe2());
  run.config()["ladder"] = plan.times;
  const Trajectory traj = invert(NetworkModel(ck.params), plan, x0);
  detail::require_finite(traj.final_state(), "latents");
  run.write("latents.csv", detail::to_csv(traj.final_state()));
  if (o.trajectory) {
    std::ostringstream os;
    write_trajectory_csv(os, traj);
    run.write("trajectory.csv", os.str());
  }
  run.set_nfe(traj.nfe);
  run.finish();
  out << "NFE=" << traj.nfe << '\n' << "run " << run.dir().string() << '\n';
  return kExitOk;
}

inline int cmd_roundtrip(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Run run("roundtrip", args, o.out, o.seed);
  const auto ck = detail::open_checkpoint(o, run);
  const Matrix x0 = detail::input_samples(o, ck.params.arch.dim, ck.params.sigma_data, run);
  const InversionPlan inv = detail::make_ladder(o, ladders::nfe2());
  Options gen_opts = o;
  gen_opts.ladder.clear();
  SamplerPlan gen;
  try {
    gen = detail::make_plan(o.plan, gen_opts);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (gen.kind == SamplerKind::one_step) gen.t_max = inv.t_end();
  run.config()["ladder"] = inv.times;
  run.config()["generation"] = detail::plan_json(gen);
  const RoundtripResult r = roundtrip(NetworkModel(ck.params), inv, gen, x0);
  detail::require_finite(r.reconstruction, "reconstruction");
  run.write("reconstruction.csv", detail::to_csv(r.reconstruction));
  std::ostringstream os;
  os.precision(17);
  os << "ladder,nfe_inversion,nfe_generation,mse\n"
     << '"' << format_list(inv.times) << "\"," << r.nfe_inversion << ',' << r.nfe_generation << ',' << r.mse << '\n';
  run.write("roundtrip.csv", os.str());
  run.set_nfe(r.nfe_inversion + r.nfe_generation);
  run.finish();
  out.precision(17);
  out << "NFE=" << r.nfe_inversion + r.nfe_generation << " (inversion " << r.nfe_inversion << ", generation "
      << r.nfe_generation << ")\n"
      << "MSE=" << r.mse << '\n'
      << "run " << run.dir().string() << '\n';
  return kExitOk;
}

inline int cmd_interpolate(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Run run("interpolate", args, o.out, o.seed);
  const auto ck = detail::open_checkpoint(o, run);
  const Matrix x = detail::input_samples(o, ck.params.arch.dim, ck.params.sigma_data, run);
  if (x.cols() < 2) throw UsageError("interpolate needs two input samples");
  const InversionPlan inv = detail::make_ladder(o, ladders::nfe2());
  const std::vector<double> alphas = parse_list(o.alphas, "--alphas");
  run.config()["ladder"] = inv.times;
  run.config()["alphas"] = alphas;
  Interpolation r;
  try {
    r = slerp_interpolate(NetworkModel(ck.params), x.col(0), x.col(1), alphas, inv);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  detail::require_finite(r.outputs, "interpolation");
  std::ostringstream os;
  os.precision(17);
  os << "alpha";
  for (Eigen::Index d = 0; d < r.outputs.rows(); ++d) os << ",x" << d;
  os << '\n';
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    os << alphas[i];
    for (Eigen::Index d = 0; d < r.outputs.rows(); ++d) os << ',' << r.outputs(d, static_cast<Eigen::Index>(i));
    os << '\n';
  }
  run.write("interpolation.csv", os.str());
  const int nfe = r.nfe_inversion + 1;
  run.set_nfe(nfe);
  run.finish();
  out << "NFE=" << nfe << " (inversion " << r.nfe_inversion << ", generation 1 per point)\n"
      << "run " << run.dir().string() << '\n';
  return kExitOk;
}

inline int cmd_inpaint(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Run run("inpaint", args, o.out, o.seed);
  const auto ck = detail::open_checkpoint(o, run);
  const Matrix x = detail::input_samples(o, ck.params.arch.dim, ck.params.sigma_data, run);
  if (o.mask.empty()) throw UsageError("--mask is required (1 marks a missing coordinate)");
  Mask mask;
  for (double v : parse_list(o.mask, "--mask")) mask.missing.push_back(static_cast<int>(v));
  mask.init_scale = o.init_scale;
  const InversionPlan plan = detail::make_ladder(o, ladders::inpaint());
  run.config()["ladder"] = plan.times;
  run.config()["mask"] = mask.missing;
  run.config()["init_scale"] = mask.init_scale;
  Matrix filled;
  try {
    filled = inpaint(NetworkModel(ck.params), x, mask, plan);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  detail::require_finite(filled, "inpainting");
  run.write("inpainted.csv", detail::to_csv(filled));
  const int nfe = static_cast<int>(plan.times.size());
  run.set_nfe(nfe);
  run.finish();
  out << "NFE=" << nfe << '\n' << "run " << run.dir().string() << '\n';
  return kExitOk;
}

inline int cmd_eval(const Options& o, const std::vector<std::string>& args, std::ostream& out,
                    std::ostream& err) {
  std::vector<std::string> metrics;
  {
    std::stringstream ss(o.metrics);
    std::string m;
    while (std::getline(ss, m, ','))
      if (!m.empty()) metrics.push_back(m);
  }
  static const std::set<std::string> known{"sw", "roundtrip", "coverage"};
  for (const auto& m : metrics)
    if (!known.count(m)) throw UsageError("unknown metric '" + m + "' (known: sw, roundtrip, coverage)");
  if (metrics.empty()) throw UsageError("--metrics is empty");
  auto wants = [&](const std::string& m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };

  Run run("eval", args, o.out, o.seed);
  const auto ck = detail::open_checkpoint(o, run);
  const NetworkModel model(ck.params);
  const int dim = ck.params.arch.dim;
  run.config()["metrics"] = metrics;

  std::ostringstream csv;
  csv.precision(17);
  csv << "plan,metric,value,nfe\n";
  auto record = [&](const std::string& plan, const std::string& metric, double value, int nfe) {
    csv << plan << ',' << metric << ',' << value << ',' << nfe << '\n';
    run.add_record({{"plan", plan}, {"metric", metric}, {"value", value}, {"nfe", nfe}, {"seed", o.seed},
                    {"checkpoint_crc32", ck.crc32}});
  };

  std::vector<std::pair<std::string, Matrix>> plot_sets;
  if (wants("sw") || wants("roundtrip")) {
    const Matrix ref = detail::input_samples(o, dim, ck.params.sigma_data, run);
    if (wants("sw")) {
      std::vector<std::string> kinds{"one_step", "ancestral", "zigzag", "combined"};
      if (o.plan_given) kinds = {o.plan};
      json plan_list = json::array();
      for (const auto& kind : kinds) {
        Options po = o;
        if (!o.plan_given) po.ladder.clear();
        SamplerPlan plan;
        try {
          plan = detail::make_plan(kind, po);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        plan_list.push_back(detail::plan_json(plan));
        const Matrix x_T = initial_noise(dim, ref.cols(), plan.t_max, o.seed);
        const Trajectory traj = run_sampler(model, plan, x_T);
        detail::require_finite(traj.final_state(), "samples");
        Rng proj(o.seed, stream::projection, 0);
        record(kind, "sliced_wasserstein", sliced_wasserstein(traj.final_state(), ref, o.projections, proj), traj.nfe);
        plot_sets.emplace_back(kind, traj.final_state());
      }
      run.config()["plans"] = plan_list;
      run.config()["projections"] = o.projections;
      plot_sets.emplace_back("reference", ref);
    }
    if (wants("roundtrip")) {
      std::vector<std::pair<std::string, std::vector<double>>> ls{
          {"invert_nfe1", ladders::nfe1()}, {"invert_nfe2", ladders::nfe2()},
          {"invert_nfe3", ladders::nfe3()}, {"invert_nfe4", ladders::nfe4()}};
      if (!o.ladder.empty() && !o.plan_given) {
        const auto lad = detail::make_ladder(o, {});
        ls = {{"invert_nfe" + std::to_string(lad.times.size() - 1), lad.times}};
      }
      json ladder_list = json::array();
      for (const auto& [name, times] : ls) {
        const InversionPlan inv{times, o.seed};
        const RoundtripResult r = roundtrip(model, inv, plans::one_step(inv.t_end()), ref);
        detail::require_finite(r.reconstruction, "reconstruction");
        record(name, "roundtrip_mse", r.mse, r.nfe_inversion + r.nfe_generation);
        ladder_list.push_back(times);
      }
      run.config()["ladders"] = ladder_list;
    }
  }
  if (wants("coverage")) {
    if (o.coverage_points < 3) throw UsageError("--coverage-points must be >= 3");
    const TimeGrid grid = build_grid(0.002, 80.0, o.coverage_points, 7.0);
    const CoveragePmf cov = pair_coverage_pmf(grid, noise_pmf(grid));
    std::ostringstream os;
    write_coverage_csv(os, cov);
    run.write("coverage.csv", os.str());
    double mass = 0.0;
    for (double p : cov.joint) mass += p;
    record("schedule_N" + std::to_string(o.coverage_points), "coverage_mass", mass, 0);
    run.config()["coverage_points"] = o.coverage_points;
  }
  run.write("metrics.csv", csv.str());

  // Plot data is a convenience: failures are reported but never change the exit code.
  if (o.plot && !plot_sets.empty()) {
    try {
      std::ostringstream gp;
      gp << "set terminal pngcairo size 900,900\nset output 'samples.png'\nset size square\nplot \\\n";
      for (std::size_t i = 0; i < plot_sets.size(); ++i) {
        const auto& [name, x] = plot_sets[i];
        std::ostringstream dat;
        dat.precision(9);
        for (Eigen::Index j = 0; j < x.cols(); ++j) dat << x(0, j) << ' ' << (x.rows() > 1 ? x(1, j) : 0.0) << '\n';
        run.write("plot_" + name + ".dat", dat.str());
        gp << "  'plot_" << name << ".dat' with points pt 7 ps 0.3 title '" << name << "'"
           << (i + 1 < plot_sets.size() ? ", \\\n" : "\n");
      }
      run.write("plot.gp", gp.str());
    } catch (const std::exception& e) {
      err << "warning: plot files not written: " << e.what() << '\n';
    }
  }
  run.finish();
  out << csv.str() << "run " << run.dir().string() << '\n';
  return kExitOk;
}

inline int cmd_dataset(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  if (o.dataset.empty()) throw UsageError("--dataset is required (single_gaussian, ring8, moons16)");
  if (o.n < 1) throw UsageError("--n must be >= 1");
  MixtureDensity d;
  try {
    d = datasets::by_name(o.dataset, 0.5);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  Run run("dataset", args, o.out, o.seed);
  run.config()["dataset"] = o.dataset;
  run.config()["n"] = o.n;
  run.config()["sigma_data"] = 0.5;
  run.write("dataset.csv", detail::to_csv(sample(d, static_cast<Eigen::Index>(o.n), o.seed)));
  run.finish();
  out << "run " << run.dir().string() << '\n';
  return kExitOk;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

namespace detail {

inline const std::set<std::string>& path_flags() {
  static const std::set<std::string> f{"--config", "--checkpoint", "--input", "--manifest"};
  return f;
}

/// The argument list as recorded in a manifest: path values made absolute,
/// --out dropped (a rerun picks its own destination).
inline std::vector<std::string> canonical_args(const std::vector<std::string>& args) {
  std::vector<std::string> outv;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    const auto eq = a.find('=');
    const std::string flag = a.substr(0, eq);
    if (flag == "--out") {
      if (eq == std::string::npos) ++i;
      continue;
    }
    if (path_flags().count(flag)) {
      if (eq != std::string::npos) {
        outv.push_back(flag + "=" + fs::absolute(a.substr(eq + 1)).lexically_normal().string());
      } else {
        outv.push_back(a);
        if (i + 1 < args.size()) outv.push_back(fs::absolute(args[++i]).lexically_normal().string());
      }
      continue;
    }
    outv.push_back(a);
  }
  return outv;
}

}  // namespace detail

/// Replays the first record of a manifest into a new run directory. A train
/// run is replayed from the resolved config.txt stored next to the manifest.
inline int cmd_rerun(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.manifest.empty()) throw UsageError("--manifest is required");
  std::ifstream in(o.manifest);
  if (!in) throw UsageError("cannot read manifest " + o.manifest);
  std::string line;
  std::getline(in, line);
  json head;
  try {
    head = json::parse(line);
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad manifest: ") + e.what());
  }
  const fs::path run_dir = fs::absolute(o.manifest).parent_path();
  std::vector<std::string> args = head.at("args").get<std::vector<std::string>>();
  if (args.empty()) throw UsageError("manifest has no command");
  if (head.at("command") == "train") {
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) args[i + 1] = (run_dir / "config.txt").string();
      else if (args[i].rfind("--config=", 0) == 0) args[i] = "--config=" + (run_dir / "config.txt").string();
    }
  }
  args.push_back("--out");
  args.push_back(o.out_given ? o.out : run_dir.parent_path().string());
  out << "rerun of " << run_dir.string() << '\n';
  return run(args, out, err);
}

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Bidirectional consistency models on toy 2-D densities"};
  app.set_version_flag("--version", BCM_LAB_VERSION);
  app.require_subcommand(1);

  auto common = [&](CLI::App* s) {
    s->add_option("--out", o.out, "Base directory for run outputs")->capture_default_str();
    s->add_option("--seed", o.seed, "Random seed");
  };
  auto model_flags = [&](CLI::App* s) {
    s->add_option("--checkpoint", o.checkpoint, "Checkpoint file written by train")->required();
  };
  auto data_flags = [&](CLI::App* s) {
    s->add_option("--input", o.input, "Sample CSV (one row per sample)");
    s->add_option("--dataset", o.dataset, "Built-in density: single_gaussian, ring8, moons16");
    s->add_option("--n", o.n, "Samples to draw from --dataset")->capture_default_str();
  };

  auto* train = app.add_subcommand("train", "Train a model from a key=value config");
  train->add_option("--config", o.config, "Config file")->required();
  train->add_flag("--quiet", o.quiet, "No progress lines");
  common(train);

  auto* sample = app.add_subcommand("sample", "Generate samples");
  model_flags(sample);
  sample->add_option("--plan", o.plan, "one_step, ancestral, zigzag or combined")->capture_default_str();
  sample->add_option("--ladder", o.ladder, "Times: ancestral steps, zigzag taus, or the combined ancestral phase");
  sample->add_option("--taus", o.taus, "Zigzag times for the combined plan");
  sample->add_option("--eps", o.eps, "Fresh-noise scales for zigzag/combined");
  sample->add_option("--n", o.n, "Number of samples")->capture_default_str();
  sample->add_flag("--trajectory", o.trajectory, "Also write every intermediate state");
  common(sample);

  auto* inv = app.add_subcommand("invert", "Map data to noise");
  model_flags(inv);
  data_flags(inv);
  inv->add_option("--ladder", o.ladder, "Inversion times eps,t_2,...,T (default 0.07,6,80)");
  inv->add_flag("--trajectory", o.trajectory, "Also write every intermediate state");
  common(inv);

  auto* rt = app.add_subcommand("roundtrip", "Invert then regenerate; report reconstruction MSE");
  model_flags(rt);
  data_flags(rt);
  rt->add_option("--ladder", o.ladder, "Inversion times (default 0.07,6,80)");
  rt->add_option("--plan", o.plan, "Generation plan")->capture_default_str();
  common(rt);

  auto* interp = app.add_subcommand("interpolate", "Slerp between the first two inputs in noise space");
  model_flags(interp);
  data_flags(interp);
  interp->add_option("--ladder", o.ladder, "Inversion times (default 0.07,6,80)");
  interp->add_option("--alphas", o.alphas, "Interpolation weights")->capture_default_str();
  common(interp);

  auto* inp = app.add_subcommand("inpaint", "Fill masked coordinates of each input row");
  model_flags(inp);
  data_flags(inp);
  inp->add_option("--mask", o.mask, "Per-coordinate mask, 1 = missing (e.g. 0,1)")->required();
  inp->add_option("--ladder", o.ladder, "Ladder times (default 0.07,0.4,1,2)");
  inp->add_option("--init-scale", o.init_scale, "Initial noise scale for missing coordinates")->capture_default_str();
  common(inp);

  auto* ev = app.add_subcommand("eval", "Metrics CSV: sliced Wasserstein per plan, roundtrip MSE per ladder, coverage pmf");
  model_flags(ev);
  data_flags(ev);
  ev->add_option("--metrics", o.metrics, "Comma-separated subset of sw,roundtrip,coverage")->capture_default_str();
  ev->add_option("--plan", o.plan, "Restrict sliced Wasserstein to one plan");
  ev->add_option("--ladder", o.ladder, "Restrict roundtrip to one ladder (or plan times with --plan)");
  ev->add_option("--taus", o.taus, "Zigzag times for the combined plan");
  ev->add_option("--eps", o.eps, "Fresh-noise scales for zigzag/combined");
  ev->add_option("--coverage-points", o.coverage_points, "Grid size N for the coverage export")->capture_default_str();
  ev->add_option("--projections", o.projections, "Sliced Wasserstein projections")->capture_default_str();
  ev->add_flag("--plot", o.plot, "Also write gnuplot data files");
  common(ev);

  auto* ds = app.add_subcommand("dataset", "Export samples of a built-in density as CSV");
  ds->add_option("--dataset", o.dataset, "single_gaussian, ring8 or moons16")->required();
  ds->add_option("--n", o.n, "Number of samples")->capture_default_str();
  common(ds);

  auto* rr = app.add_subcommand("rerun", "Replay a run from its manifest.jsonl");
  rr->add_option("--manifest", o.manifest, "manifest.jsonl of the run to replay")->required();
  rr->add_option("--out", o.out, "Base directory (default: next to the original run)");

  std::vector<std::string> argv_store{"bcm_lab"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto* s : app.get_subcommands()) {
    o.seed_given = s->get_option_no_throw("--seed") && s->count("--seed") > 0;
    o.out_given = s->count("--out") > 0;
    o.plan_given = s->get_option_no_throw("--plan") && s->count("--plan") > 0;
  }
  const std::vector<std::string> recorded = detail::canonical_args(args);
  if (!o.checkpoint.empty()) o.checkpoint = fs::absolute(o.checkpoint).string();

  try {
    if (*train) return cmd_train(o, recorded, out);
    if (*sample) return cmd_sample(o, recorded, out);
    if (*inv) return cmd_invert(o, recorded, out);
    if (*rt) return cmd_roundtrip(o, recorded, out);
    if (*interp) return cmd_interpolate(o, recorded, out);
    if (*inp) return cmd_inpaint(o, recorded, out);
    if (*ev) return cmd_eval(o, recorded, out, err);
    if (*ds) return cmd_dataset(o, recorded, out);
    if (*rr) return cmd_rerun(o, out, err);
  } catch (const NumericAbort& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ChecksumError& e) {
    err << "refusing to run: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace bcm::cli
