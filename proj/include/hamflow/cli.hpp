#pragma once

// Command-line front end: generate, simulate, train, eval and selftest.
//
// Every option also has a config-file key (the long flag name with dashes
// turned into underscores). Values are resolved as command line, then the
// JSON file given by --config, then built-in defaults, and the resolved set is
// written to <out>/config.json.
//
// Exit codes: 0 success, 1 selftest failure, 2 usage or configuration error,
// 3 numerical failure, 4 file or format error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hamflow/core.hpp"
#include "hamflow/datagen.hpp"
#include "hamflow/integrators.hpp"
#include "hamflow/io.hpp"
#include "hamflow/learner.hpp"
#include "hamflow/models.hpp"
#include "hamflow/nhf.hpp"
#include "hamflow/reports.hpp"
#include "hamflow/selftest.hpp"
#include "hamflow/systems.hpp"

namespace hamflow::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kSelftestFailed = 1, kUsage = 2, kNumerical = 3, kIo = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Options of one subcommand together with their config keys and defaults.
class OptionSet {
 public:
  explicit OptionSet(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& flag, T default_value, const std::string& help) {
    auto holder = std::make_shared<T>(default_value);
    CLI::Option* opt = app_->add_option(flag, *holder, help);
    const std::string key = key_of(flag);
    defaults_[key] = default_value;
    entries_.push_back({key, opt, [holder] { return json(*holder); }});
    return opt;
  }

  /// Option whose default is resolved later (stored as null).
  template <class T>
  CLI::Option* add_optional(const std::string& flag, const std::string& help) {
    auto holder = std::make_shared<T>();
    CLI::Option* opt = app_->add_option(flag, *holder, help);
    const std::string key = key_of(flag);
    defaults_[key] = nullptr;
    entries_.push_back({key, opt, [holder] { return json(*holder); }});
    return opt;
  }

  json resolve(const std::string& command, const std::string& config_path) const {
    json cfg = defaults_;
    if (!config_path.empty()) {
      json file;
      try {
        file = json::parse(io::read_text(config_path));
      } catch (const json::exception& e) {
        throw UsageError("cannot parse config " + config_path + ": " + e.what());
      }
      if (!file.is_object()) throw UsageError("config file must hold a JSON object");
      for (const auto& [k, v] : file.items()) {
        if (k == "command") {
          if (v != command) throw UsageError("config file is for command '" + v.dump() + "', not '" + command + "'");
          continue;
        }
        if (!defaults_.contains(k)) throw UsageError("unknown config key '" + k + "' for " + command);
        cfg[k] = v;
      }
    }
    for (const auto& e : entries_)
      if (e.opt->count() > 0) cfg[e.key] = e.value();
    cfg["command"] = command;
    return cfg;
  }

 private:
  static std::string key_of(const std::string& flag) {
    std::string k = flag.substr(flag.find_first_not_of('-'));
    for (char& c : k)
      if (c == '-') c = '_';
    return k;
  }

  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<json()> value;
  };
  CLI::App* app_;
  json defaults_ = json::object();
  std::vector<Entry> entries_;
};

template <class T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError("config key '" + key + "': " + e.what());
  }
}

inline fs::path output_dir(const json& cfg) {
  const auto out = get<std::string>(cfg, "out");
  if (out.empty()) throw UsageError("--out is required");
  io::ensure_dir(out);
  return out;
}

inline void echo_config(const fs::path& dir, const json& cfg) { io::write_text(dir / "config.json", cfg.dump(2) + "\n"); }

inline std::vector<std::string> state_header(std::size_t d) {
  std::vector<std::string> h;
  for (std::size_t k = 0; k < d; ++k) h.push_back("q" + std::to_string(k));
  for (std::size_t k = 0; k < d; ++k) h.push_back("p" + std::to_string(k));
  return h;
}

inline std::vector<double> state_row(double a, double b, const PhaseState& s) {
  std::vector<double> row{a, b};
  row.insert(row.end(), s.q.begin(), s.q.end());
  row.insert(row.end(), s.p.begin(), s.p.end());
  return row;
}

// ---------------------------------------------------------------------------
// generate

inline int cmd_generate(const json& cfg, std::ostream& out) {
  const SystemKind kind = parse_system(get<std::string>(cfg, "system"));
  DatasetSpec spec = DatasetSpec::defaults(kind);
  spec.n_train = get<int>(cfg, "n_train");
  spec.n_test = get<int>(cfg, "n_test");
  spec.n_steps = get<int>(cfg, "n_steps");
  spec.dt = get<double>(cfg, "dt");
  if (!cfg.at("radius_lo").is_null()) spec.radius_range[0] = get<double>(cfg, "radius_lo");
  if (!cfg.at("radius_hi").is_null()) spec.radius_range[1] = get<double>(cfg, "radius_hi");
  if (!cfg.at("noise_std").is_null()) spec.noise_std = get<double>(cfg, "noise_std");
  if (!cfg.at("softening").is_null()) {
    if (!spec.system.is_nbody()) throw UsageError("--softening applies to n-body systems only");
    spec.system.nbody.softening = get<double>(cfg, "softening");
  }
  spec.image_size = get<int>(cfg, "image_size");
  spec.render_frames = get<bool>(cfg, "frames");
  spec.substeps = get<int>(cfg, "substeps");
  spec.max_substeps = std::max(spec.substeps, spec.max_substeps);
  spec.seed = get<std::uint64_t>(cfg, "seed");
  spec.validate();

  json resolved = cfg;
  resolved["radius_lo"] = spec.radius_range[0];
  resolved["radius_hi"] = spec.radius_range[1];
  resolved["noise_std"] = spec.noise_std;
  if (spec.system.is_nbody()) resolved["softening"] = spec.system.nbody.softening;

  const fs::path dir = output_dir(cfg);
  const json manifest = write_dataset(spec, dir, get<int>(cfg, "threads"));
  echo_config(dir, resolved);
  out << "wrote " << spec.n_train << " train and " << spec.n_test << " test trajectories of "
      << to_string(kind) << " to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate

inline int cmd_simulate(const json& cfg, std::ostream& out) {
  const SystemKind kind = parse_system(get<std::string>(cfg, "system"));
  const SystemSpec sys = SystemSpec::defaults(kind);
  const std::string integrator = get<std::string>(cfg, "integrator");
  const int steps = get<int>(cfg, "steps");
  const double dt = get<double>(cfg, "dt") * get<double>(cfg, "dt_scale");
  if (steps < 0) throw UsageError("--steps must be >= 0");
  if (dt == 0.0 || !std::isfinite(dt)) throw UsageError("effective dt must be finite and non-zero");

  std::optional<SeparableHamiltonianModel> learned;
  const auto ckpt = get<std::string>(cfg, "checkpoint");
  if (!ckpt.empty()) learned = hamiltonian_from_checkpoint(load_checkpoint(ckpt));
  const std::size_t d = learned ? static_cast<std::size_t>(learned->dim()) : sys.dim();
  const AnyEnergy h = learned ? AnyEnergy(*learned) : sys.energy();

  auto q = get<std::vector<double>>(cfg, "q");
  auto p = get<std::vector<double>>(cfg, "p");
  json resolved = cfg;
  if (q.empty() && p.empty()) {
    RngStream rng(get<std::uint64_t>(cfg, "seed"));
    const PhaseState s0 = learned ? PhaseState(sample_gaussian(rng, d, 0.0, 0.5), sample_gaussian(rng, d, 0.0, 0.5))
                                  : sample_initial_state(sys, default_radius_range(kind), rng);
    q = s0.q;
    p = s0.p;
    resolved["q"] = q;
    resolved["p"] = p;
  }
  if (q.size() != d || p.size() != d)
    throw UsageError("--q and --p need " + std::to_string(d) + " values each for this system");
  const PhaseState s0(q, p);

  Trajectory traj;
  if (integrator == "reference") {
    traj = reference_rollout(h, s0, dt, steps, get<int>(cfg, "substeps"));
  } else {
    traj = rollout(h, s0, {parse_integrator(integrator), dt, steps});
  }

  const fs::path dir = output_dir(cfg);
  {
    auto header = state_header(d);
    header.insert(header.begin(), {"step", "t"});
    io::CsvWriter w(dir / "trajectory.csv", header);
    for (std::size_t t = 0; t < traj.size(); ++t) w.row_values(state_row(double(t), t * dt + 0.0, traj.states[t]));
    w.close();
  }
  {
    io::CsvWriter w(dir / "energy.csv", {"step", "t", "energy"});
    for (std::size_t t = 0; t < traj.size(); ++t) w.row(t, t * dt + 0.0, h.energy(traj.states[t]));
    w.close();
  }
  echo_config(dir, resolved);
  out << "simulated " << steps << " steps of " << (learned ? std::string("learned model") : to_string(kind))
      << " with " << integrator << " (dt " << dt << "), var(H) = " << hamiltonian_variance(h, traj) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

inline const char* kThreadNote =
    "multi-threaded training: results depend on the thread count through floating-point reduction order";

inline StateDataset learner_dataset(const std::vector<Trajectory>& trajs, const SystemSpec& sys, bool with_exact) {
  StateDataset ds{trajs, {}};
  if (with_exact) {
    const AnyEnergy h = sys.energy();
    for (const auto& tr : trajs) ds.derivatives.push_back(exact_derivatives(h, tr));
  }
  return ds;
}

inline int train_learner_cmd(const json& cfg, const fs::path& dir, std::ostream& out) {
  const auto data_path = get<std::string>(cfg, "data");
  if (data_path.empty()) throw UsageError("--data is required for modes rollout and hnn");
  if (!fs::exists(fs::path(data_path) / "manifest.json"))
    throw UsageError("no dataset at " + data_path + " (manifest.json missing)");
  const LoadedDataset ds = read_dataset(data_path);
  if (!cfg.at("system").is_null() && parse_system(get<std::string>(cfg, "system")) != ds.spec.system.kind)
    throw UsageError("--system does not match the dataset system " + std::string(to_string(ds.spec.system.kind)));

  const std::string obs = get<std::string>(cfg, "observations");
  if (obs != "clean" && obs != "noisy") throw UsageError("--observations must be clean or noisy");
  LearnerConfig lc;
  lc.mode = parse_learner_mode(get<std::string>(cfg, "mode"));
  lc.hidden = get<int>(cfg, "hidden");
  lc.depth = get<int>(cfg, "depth");
  lc.lr = get<double>(cfg, "lr");
  lc.steps = get<int>(cfg, "steps");
  lc.batch = get<int>(cfg, "batch");
  lc.window = get<int>(cfg, "window");
  lc.eval_every = get<int>(cfg, "eval_every");
  lc.threads = get<int>(cfg, "threads");
  lc.seed = get<std::uint64_t>(cfg, "seed");
  lc.observe_momentum = !get<bool>(cfg, "latent_momentum");

  const bool exact_targets = lc.mode == LearnerMode::hnn && obs == "clean";
  const StateDataset train = learner_dataset(obs == "clean" ? ds.train.clean : ds.train.noisy, ds.spec.system,
                                             exact_targets);
  const StateDataset test = learner_dataset(ds.test.clean, ds.spec.system, false);
  const LearnerResult r = train_learner(train, test.trajectories.empty() ? nullptr : &test, lc);

  std::vector<std::string> comments;
  if (lc.threads > 1) comments.push_back(kThreadNote);
  {
    io::CsvWriter w(dir / "metrics.csv", {"step_index", "train_mse", "test_mse", "hamiltonian_variance"}, comments);
    for (const auto& m : r.metrics) w.row(m.step, m.train_mse, m.test_mse, m.hamiltonian_variance);
    w.close();
  }
  {
    io::CsvWriter w(dir / "loss.csv", {"step", "loss"}, comments);
    for (std::size_t i = 0; i < r.curve.size(); ++i) w.row(i, r.curve[i]);
    w.close();
  }
  save_checkpoint((dir / "model.ckpt").string(), to_checkpoint(r.model));
  if (r.diverged) {
    std::cerr << "training diverged: " << r.message << " (last good parameters saved)\n";
    return kNumerical;
  }
  if (!r.metrics.empty())
    out << "trained " << to_string(lc.mode) << " model for " << lc.steps << " steps: test mse "
        << r.metrics.back().test_mse << "\n";
  return kOk;
}

inline int train_flow_cmd(const json& cfg, const fs::path& dir, std::ostream& out) {
  const std::string mode = get<std::string>(cfg, "mode");
  const GaussianMixture target = GaussianMixture::named(get<std::string>(cfg, "density"));
  const std::uint64_t seed = get<std::uint64_t>(cfg, "seed");
  RngStream data_rng = RngStream(seed).fork(0x64617461);
  const auto train = target.sample(data_rng, static_cast<std::size_t>(get<int>(cfg, "n_samples")));
  const auto test = target.sample(data_rng, static_cast<std::size_t>(get<int>(cfg, "n_test_samples")));

  FlowTrainConfig tc;
  tc.steps = get<int>(cfg, "steps");
  tc.batch = get<int>(cfg, "batch");
  tc.lr = get<double>(cfg, "lr");
  tc.threads = get<int>(cfg, "threads");
  tc.seed = seed;
  const PriorSpec prior = get<std::string>(cfg, "prior") == "soft_uniform"
                              ? PriorSpec::soft_uniform(get<double>(cfg, "prior_sigma"), get<double>(cfg, "prior_beta"))
                              : PriorSpec::standard_normal();
  if (get<std::string>(cfg, "prior") != "soft_uniform" && get<std::string>(cfg, "prior") != "standard_normal")
    throw UsageError("--prior must be standard_normal or soft_uniform");

  FlowTrainResult stats;
  Checkpoint ck;
  std::function<double(const PhaseState&)> log_joint;
  std::optional<NhfModel> nhf_model;
  std::optional<RnvpModel> rnvp_model;
  if (mode == "nhf") {
    NhfConfig nc;
    nc.n_hamiltonians = get<int>(cfg, "n_hamiltonians");
    nc.leapfrog_steps = get<int>(cfg, "leapfrog_steps");
    nc.hidden = get<int>(cfg, "hidden");
    nc.depth = get<int>(cfg, "depth");
    nc.learn_dt = !get<bool>(cfg, "fixed_dt");
    nc.prior = prior;
    nc.train = tc;
    NhfTrainResult r = train_nhf(train, nc);
    stats = r.stats;
    nhf_model = std::move(r.model);
    ck = to_checkpoint(*nhf_model);
  } else {
    RnvpConfig rc;
    rc.n_layers = get<int>(cfg, "n_layers");
    rc.hidden = get<int>(cfg, "hidden");
    rc.prior = prior;
    rc.train = tc;
    RnvpTrainResult r = train_rnvp(train, rc);
    stats = r.stats;
    rnvp_model = std::move(r.model);
    ck = to_checkpoint(*rnvp_model);
  }

  std::vector<std::string> comments;
  if (tc.threads > 1) comments.push_back(kThreadNote);
  {
    io::CsvWriter w(dir / "curve.csv", {"step", "negative_elbo"}, comments);
    for (std::size_t i = 0; i < stats.curve.size(); ++i) w.row(i, stats.curve[i]);
    w.close();
  }
  save_checkpoint((dir / "model.ckpt").string(), ck);

  json summary{{"mode", mode}, {"density", get<std::string>(cfg, "density")}, {"diverged", stats.diverged}};
  if (target.dim() == 1 && !stats.diverged) {
    double analytic = 0.0;
    for (const Vec& x : test) analytic -= target.log_density(x);
    analytic /= static_cast<double>(test.size());
    const double nll = nhf_model ? mean_nll_1d(*nhf_model, test) : mean_nll_1d(*rnvp_model, test);
    summary["test_nll"] = nll;
    summary["analytic_nll"] = analytic;
    out << mode << " test NLL " << nll << " (analytic " << analytic << ")\n";
  }
  io::write_text(dir / "summary.json", summary.dump(2) + "\n");
  if (stats.diverged) {
    std::cerr << "training diverged: " << stats.message << " (last good parameters saved)\n";
    return kNumerical;
  }
  return kOk;
}

inline int cmd_train(const json& cfg, std::ostream& out) {
  const std::string mode = get<std::string>(cfg, "mode");
  if (mode != "rollout" && mode != "hnn" && mode != "nhf" && mode != "rnvp")
    throw UsageError("--mode must be rollout, hnn, nhf or rnvp");
  if ((mode == "rollout" || mode == "hnn") && get<std::string>(cfg, "data").empty())
    throw UsageError("--data is required for modes rollout and hnn");
  if (mode == "nhf" || mode == "rnvp") GaussianMixture::named(get<std::string>(cfg, "density"));
  const fs::path dir = output_dir(cfg);
  echo_config(dir, cfg);
  if (mode == "rollout" || mode == "hnn") return train_learner_cmd(cfg, dir, out);
  return train_flow_cmd(cfg, dir, out);
}

// ---------------------------------------------------------------------------
// eval

inline void write_grid(const fs::path& dir, const std::string& stem, const DensityGrid& g, const std::string& xname,
                       const std::string& yname, const std::string& vname) {
  io::CsvWriter w(dir / (stem + ".csv"), {xname, yname, vname});
  for (int j = 0; j < g.grid.ny; ++j)
    for (int i = 0; i < g.grid.nx; ++i) w.row(g.grid.x(i), g.grid.y(j), g.at(i, j));
  w.close();
  io::write_pnm(dir / (stem + ".pgm"), io::heatmap(g.values, g.grid.nx, g.grid.ny));
}

inline Grid2D eval_grid(const json& cfg) {
  Grid2D g;
  const double e = get<double>(cfg, "extent");
  g.x0 = g.y0 = -e;
  g.x1 = g.y1 = e;
  g.nx = g.ny = get<int>(cfg, "grid_n");
  g.validate();
  return g;
}

inline int eval_hamiltonian(const json& cfg, const Checkpoint& ck, const fs::path& dir, std::ostream& out) {
  const SeparableHamiltonianModel model = hamiltonian_from_checkpoint(ck);
  const std::size_t d = static_cast<std::size_t>(model.dim());
  json summary{{"kind", "hamiltonian"}, {"dim", d}};

  // Initial states and reference trajectories: the dataset's clean test
  // split when given, otherwise fresh draws from the system.
  std::vector<Trajectory> reference;
  std::string system_name;
  const auto data_path = get<std::string>(cfg, "data");
  const int n_traj = get<int>(cfg, "n_trajectories");
  if (!data_path.empty()) {
    LoadedDataset ds = read_dataset(data_path);
    system_name = to_string(ds.spec.system.kind);
    if (ds.spec.system.dim() != d) throw UsageError("checkpoint dimension does not match the dataset");
    reference = std::move(ds.test.clean);
    if (static_cast<int>(reference.size()) > n_traj) reference.resize(static_cast<std::size_t>(n_traj));
  } else {
    const SystemKind kind = parse_system(get<std::string>(cfg, "system"));
    DatasetSpec spec = DatasetSpec::defaults(kind);
    if (spec.system.dim() != d) throw UsageError("checkpoint dimension does not match --system");
    spec.n_train = 0;
    spec.n_test = n_traj;
    spec.n_steps = get<int>(cfg, "steps");
    spec.seed = get<std::uint64_t>(cfg, "seed");
    system_name = to_string(kind);
    reference = generate_split(spec, false, get<int>(cfg, "threads")).clean;
  }
  if (reference.empty()) throw UsageError("no trajectories to evaluate");

  {
    io::CsvWriter w(dir / "hvar.csv", {"split", "system", "integrator", "variance"},
                    {"variance of the model energy along model rollouts (data: along the reference trajectories), "
                     "unscaled, averaged over trajectories"});
    for (const Integrator kind : {Integrator::euler, Integrator::leapfrog, Integrator::rk4}) {
      double acc = 0.0;
      for (const auto& tr : reference)
        acc += hamiltonian_variance(model, rollout(model, tr.states[0], {kind, tr.dt, static_cast<int>(tr.size()) - 1}));
      acc /= static_cast<double>(reference.size());
      w.row("test", system_name, to_string(kind), acc);
      summary["hamiltonian_variance"][to_string(kind)] = acc;
    }
    double acc = 0.0;
    for (const auto& tr : reference) acc += hamiltonian_variance(model, tr);
    acc /= static_cast<double>(reference.size());
    w.row("test", system_name, "data", acc);
    summary["hamiltonian_variance"]["data"] = acc;
    w.close();
  }
  {
    MetricSeries series;
    for (const auto& tr : reference) {
      const Trajectory pred = rollout(model, tr.states[0], {Integrator::leapfrog, tr.dt, static_cast<int>(tr.size()) - 1});
      MetricSeries one = per_step_mse(pred, tr);
      series.per_trajectory.push_back(one.per_trajectory.front());
    }
    series.aggregate();
    io::CsvWriter w(dir / "mse.csv", {"step", "mean", "std"});
    for (std::size_t t = 0; t < series.steps(); ++t) w.row(t, series.mean[t], series.stddev[t]);
    w.close();
    double avg = 0.0;
    for (std::size_t t = 1; t < series.steps(); ++t) avg += series.mean[t];
    summary["rollout_mse"] = series.steps() > 1 ? avg / static_cast<double>(series.steps() - 1) : 0.0;
  }

  if (d == 1) {
    const Grid2D g = eval_grid(cfg);
    write_grid(dir, "energy", evaluate_grid(g, [&](double q, double p) { return model.energy(PhaseState({q}, {p})); }),
               "q", "p", "energy");
    io::CsvWriter kin(dir / "kinetic.csv", {"p", "kinetic"});
    io::CsvWriter pot(dir / "potential.csv", {"q", "potential"});
    for (int i = 0; i < g.nx; ++i) {
      const Vec x{g.x(i)};
      kin.row(x[0], model.kinetic.forward(x)[0]);
      pot.row(x[0], model.potential.forward(x)[0]);
    }
    kin.close();
    pot.close();

    const int nv = get<int>(cfg, "field_n");
    const double dt = reference.front().dt;
    io::CsvWriter vf(dir / "vector_field.csv", {"q", "p", "dq", "dp"});
    for (int j = 0; j < nv; ++j)
      for (int i = 0; i < nv; ++i) {
        const double q = g.x0 + (i + 0.5) * (g.x1 - g.x0) / nv;
        const double p = g.y0 + (j + 0.5) * (g.y1 - g.y0) / nv;
        const PhaseState s1 = leapfrog_step(model, PhaseState({q}, {p}), dt);
        vf.row(q, p, s1.q[0] - q, s1.p[0] - p);
      }
    vf.close();
  }
  io::write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "evaluated Hamiltonian model on " << reference.size() << " trajectories; leapfrog var(H) "
      << summary["hamiltonian_variance"]["leapfrog"].get<double>() << "\n";
  return kOk;
}

template <class Model>
int eval_flow(const json& cfg, const Model& model, const std::string& kind, const fs::path& dir, std::ostream& out) {
  const std::size_t d = static_cast<std::size_t>(model.dim());
  json summary{{"kind", kind}, {"dim", d}};
  const Grid2D g = eval_grid(cfg);
  const double bw = get<double>(cfg, "bandwidth");

  RngStream rng = RngStream(get<std::uint64_t>(cfg, "seed")).fork(0x73616d70);
  const int n = get<int>(cfg, "n_samples");
  std::vector<PhaseState> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) samples.push_back(model.sample(rng));
  {
    auto header = state_header(d);
    io::CsvWriter w(dir / "samples.csv", header);
    for (const auto& s : samples) {
      std::vector<double> row(s.q);
      row.insert(row.end(), s.p.begin(), s.p.end());
      w.row_values(row);
    }
    w.close();
  }
  // Volume preservation trades a narrow q marginal for a wide p marginal,
  // so the density grid spans p over [-p_extent, p_extent]; by default five
  // sample standard deviations of p.
  Grid2D pg = g;
  double p_extent = 0.0;
  if (cfg.at("p_extent").is_null()) {
    double m = 0.0, sq = 0.0;
    for (const auto& s : samples) m += s.p[0] / n;
    for (const auto& s : samples) sq += (s.p[0] - m) * (s.p[0] - m) / n;
    p_extent = std::max(get<double>(cfg, "extent"), 5.0 * std::sqrt(sq) + std::abs(m));
  } else {
    p_extent = get<double>(cfg, "p_extent");
  }
  pg.y0 = -p_extent;
  pg.y1 = p_extent;
  pg.validate();
  // KDE over (q, p) in one dimension, over (q0, q1) in two.
  if (d <= 2) {
    std::vector<std::array<double, 2>> pts;
    for (const auto& s : samples) pts.push_back(d == 1 ? std::array{s.q[0], s.p[0]} : std::array{s.q[0], s.q[1]});
    const DensityGrid kde = kde_grid(pts, bw, d == 1 ? pg : g);
    io::CsvWriter w(dir / "kde.csv", {"x", "y", "density"});
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) w.row(kde.grid.x(i), kde.grid.y(j), kde.at(i, j));
    w.close();
    summary["kde_mass"] = kde.mass();
  }
  if (d == 1) {
    const DensityGrid dens =
        evaluate_grid(pg, [&](double q, double p) { return std::exp(model.log_joint(PhaseState({q}, {p}))); });
    write_grid(dir, "density", dens, "q", "p", "density");
    summary["grid_mass"] = dens.mass();
    summary["p_extent"] = p_extent;

    std::optional<GaussianMixture> target;
    if (!cfg.at("density").is_null()) target = GaussianMixture::named(get<std::string>(cfg, "density"));
    io::CsvWriter w(dir / "marginal.csv", {"q", "density", "target"});
    for (int i = 0; i < g.nx; ++i) {
      const double q = g.x(i);
      const double lp = log_marginal_quadrature([&](const PhaseState& s) { return model.log_joint(s); }, q);
      w.row(q, std::exp(lp), target ? std::exp(target->log_density(Vec{q})) : NAN);
    }
    w.close();
    if (target) {
      RngStream trng = RngStream(get<std::uint64_t>(cfg, "seed")).fork(0x74657374);
      const auto test = target->sample(trng, 500);
      double analytic = 0.0;
      for (const Vec& x : test) analytic -= target->log_density(x);
      summary["test_nll"] = mean_nll_1d(model, test);
      summary["analytic_nll"] = analytic / static_cast<double>(test.size());
    }
    out << "evaluated " << kind << " model: grid mass " << dens.mass() << "\n";
  } else {
    out << "evaluated " << kind << " model from " << n << " samples\n";
  }
  io::write_text(dir / "summary.json", summary.dump(2) + "\n");
  return kOk;
}

inline int cmd_eval(const json& cfg, std::ostream& out) {
  const auto path = get<std::string>(cfg, "checkpoint");
  if (path.empty()) throw UsageError("--checkpoint is required");
  const Checkpoint ck = load_checkpoint(path);
  const fs::path dir = output_dir(cfg);
  echo_config(dir, cfg);
  switch (ck.kind) {
    case CheckpointKind::hamiltonian: return eval_hamiltonian(cfg, ck, dir, out);
    case CheckpointKind::nhf: return eval_flow(cfg, nhf_from_checkpoint(ck), "nhf", dir, out);
    case CheckpointKind::rnvp: return eval_flow(cfg, rnvp_from_checkpoint(ck), "rnvp", dir, out);
  }
  throw IoError("unknown checkpoint kind");
}

// ---------------------------------------------------------------------------
// entry point

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"hamflow: Hamiltonian dynamics learning and Hamiltonian flows"};
  app.require_subcommand(1);
  std::string config_path;

  struct Command {
    CLI::App* app;
    std::unique_ptr<OptionSet> opts;
    std::function<int(const json&, std::ostream&)> fn;
  };
  std::vector<Command> commands;
  const auto command = [&](const std::string& name, const std::string& help, auto fn) -> OptionSet& {
    CLI::App* sub = app.add_subcommand(name, help);
    if (name != "selftest") sub->add_option("--config", config_path, "JSON config file (flags override it)");
    commands.push_back({sub, std::make_unique<OptionSet>(sub), fn});
    return *commands.back().opts;
  };

  {
    OptionSet& o = command("generate", "generate a trajectory dataset", cmd_generate);
    o.add<std::string>("--system", "mass_spring", "mass_spring, pendulum, two_body or three_body");
    o.add<int>("--n-train", 1000, "training trajectories");
    o.add<int>("--n-test", 200, "test trajectories");
    o.add<int>("--n-steps", 30, "steps per trajectory");
    o.add<double>("--dt", kDefaultDt, "time between observations");
    o.add_optional<double>("--radius-lo", "initial radius lower bound (system default)");
    o.add_optional<double>("--radius-hi", "initial radius upper bound (system default)");
    o.add_optional<double>("--noise-std", "observation noise std (system default)");
    o.add_optional<double>("--softening", "n-body softening length");
    o.add<int>("--image-size", 64, "frame width and height in pixels");
    o.add<bool>("--frames", true, "render PPM frames");
    o.add<int>("--substeps", 100, "RK4 substeps per dt for ground truth");
    o.add<std::uint64_t>("--seed", 0, "random seed");
    o.add<int>("--threads", 1, "worker threads");
    o.add<std::string>("--out", "", "output directory");
  }
  {
    OptionSet& o = command("simulate", "roll out a system or a learned model", cmd_simulate);
    o.add<std::string>("--system", "mass_spring", "system (sets the dimension and initial-state draw)");
    o.add<std::string>("--integrator", "leapfrog", "euler, rk4, leapfrog or reference");
    o.add<int>("--steps", 30, "number of steps");
    o.add<double>("--dt", kDefaultDt, "step size (negative runs backward)");
    o.add<double>("--dt-scale", 1.0, "multiplies dt (0.5 half speed, 2 double speed)");
    o.add<std::vector<double>>("--q", {}, "initial positions")->delimiter(',');
    o.add<std::vector<double>>("--p", {}, "initial momenta")->delimiter(',');
    o.add<std::string>("--checkpoint", "", "Hamiltonian checkpoint to simulate instead of the analytic system");
    o.add<int>("--substeps", 100, "substeps for the reference integrator");
    o.add<std::uint64_t>("--seed", 0, "seed for the initial state when --q/--p are absent");
    o.add<std::string>("--out", "", "output directory");
  }
  {
    OptionSet& o = command("train", "train a Hamiltonian learner or a density flow", cmd_train);
    o.add<std::string>("--mode", "rollout", "rollout, hnn, nhf or rnvp");
    o.add<std::string>("--data", "", "dataset directory (rollout, hnn)");
    o.add_optional<std::string>("--system", "expected dataset system");
    o.add<std::string>("--observations", "noisy", "train on clean or noisy states (rollout, hnn)");
    o.add<bool>("--latent-momentum", false, "hide momenta from the learner (rollout)");
    o.add<int>("--window", 30, "rollout window");
    o.add<int>("--eval-every", 100, "metrics interval in steps");
    o.add<std::string>("--density", "mixture2", "mixture2, mixture4 or point (nhf, rnvp)");
    o.add<int>("--n-samples", 2000, "training samples (nhf, rnvp)");
    o.add<int>("--n-test-samples", 500, "test samples (nhf, rnvp)");
    o.add<std::string>("--prior", "standard_normal", "standard_normal or soft_uniform (nhf, rnvp)");
    o.add<double>("--prior-sigma", 4.0, "soft-uniform width");
    o.add<double>("--prior-beta", 4.0, "soft-uniform edge sharpness");
    o.add<int>("--n-hamiltonians", 2, "Hamiltonian blocks (nhf)");
    o.add<int>("--leapfrog-steps", 2, "leapfrog steps per block (nhf)");
    o.add<bool>("--fixed-dt", false, "freeze the flow step size (nhf)");
    o.add<int>("--n-layers", 2, "coupling layers (rnvp)");
    o.add<int>("--hidden", 32, "hidden width");
    o.add<int>("--depth", 2, "hidden layers");
    o.add<double>("--lr", 3e-3, "Adam learning rate");
    o.add<int>("--steps", 2000, "optimizer steps");
    o.add<int>("--batch", 32, "minibatch size");
    o.add<std::uint64_t>("--seed", 0, "random seed");
    o.add<int>("--threads", 1, "worker threads");
    o.add<std::string>("--out", "", "output directory");
  }
  {
    OptionSet& o = command("eval", "evaluate a checkpoint and write report files", cmd_eval);
    o.add<std::string>("--checkpoint", "", "checkpoint file");
    o.add<std::string>("--data", "", "dataset directory (Hamiltonian models)");
    o.add<std::string>("--system", "mass_spring", "system for fresh trajectories when --data is absent");
    o.add<int>("--n-trajectories", 50, "trajectories to evaluate");
    o.add<int>("--steps", 30, "rollout length for fresh trajectories");
    o.add_optional<std::string>("--density", "target density for flow checkpoints");
    o.add<int>("--grid-n", 100, "grid cells per axis");
    o.add<double>("--extent", 4.0, "grid covers [-extent, extent] on both axes");
    o.add_optional<double>("--p-extent", "momentum half-range of flow density grids (default from samples)");
    o.add<int>("--field-n", 20, "vector field points per axis");
    o.add<int>("--n-samples", 5000, "flow samples for the KDE");
    o.add<double>("--bandwidth", 0.3, "KDE bandwidth");
    o.add<std::uint64_t>("--seed", 0, "random seed");
    o.add<int>("--threads", 1, "worker threads");
    o.add<std::string>("--out", "", "output directory");
  }
  command("selftest", "run the invariant suite", [](const json&, std::ostream& os) {
    return selftest::run_all(os) ? kOk : kSelftestFailed;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* active = &app;
  try {
    for (auto& c : commands) {
      if (!c.app->parsed()) continue;
      active = c.app;
      const json cfg = c.opts->resolve(c.app->get_name(), config_path);
      return c.fn(cfg, out);
    }
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << active->help() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {  // also ShapeError
    err << "error: " << e.what() << "\n\n" << active->help() << "\n";
    return kUsage;
  }
}

}  // namespace hamflow::cli
