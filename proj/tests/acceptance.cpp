// Acceptance run: one PASS/FAIL line per criterion, with the measured values
// and wall time against its budget. Exits non-zero if any criterion fails.
#include <sys/wait.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>

#include "hamflow/hamflow.hpp"

using namespace hamflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double x) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", x);
  return b;
}

// ---------------------------------------------------------------------------
// Shared oracles

/// Central-difference Jacobian of one leapfrog step, determinant via LU.
template <class H>
double fd_leapfrog_det(const H& h, const PhaseState& s, double dt, double eps = 1e-6) {
  const Vec x = state_concat(s);
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd J(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Vec a = x, b = x;
    a[j] += eps;
    b[j] -= eps;
    const Vec fa = state_concat(leapfrog_step(h, state_split(a), dt));
    const Vec fb = state_concat(leapfrog_step(h, state_split(b), dt));
    for (Eigen::Index i = 0; i < n; ++i) J(i, j) = (fa[i] - fb[i]) / (2 * eps);
  }
  return J.determinant();
}

double min_pair_distance(const PhaseState& s) {
  double best = INFINITY;
  const std::size_t n = s.dim() / 2;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      best = std::min(best, std::hypot(s.q[2 * i] - s.q[2 * j], s.q[2 * i + 1] - s.q[2 * j + 1]));
  return best;
}

/// Worst relative error of grad . v against a central difference of `loss`
/// along `n_dirs` random unit directions over all parameters.
double directional_check(const ParamList& params, const std::vector<Vec>& grad, const std::function<double()>& loss,
                         RngStream& rng, int n_dirs, double h = 1e-5) {
  double worst = 0.0;
  for (int k = 0; k < n_dirs; ++k) {
    std::vector<Vec> v;
    double norm = 0.0;
    for (const Tensor* t : params) {
      v.push_back(sample_gaussian(rng, t->data.size(), 0.0, 1.0));
      for (double x : v.back()) norm += x * x;
    }
    double analytic = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < v[i].size(); ++j) {
        v[i][j] /= std::sqrt(norm);
        analytic += grad[i][j] * v[i][j];
      }
    const auto at = [&](double s) {
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < v[i].size(); ++j) params[i]->data[j] += s * v[i][j];
      const double f = loss();
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < v[i].size(); ++j) params[i]->data[j] -= s * v[i][j];
      return f;
    };
    const double fd = (at(h) - at(-h)) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8}));
  }
  return worst;
}

std::vector<ad::Var> leading_vars(ad::Tape& t, std::size_t n) {
  std::vector<ad::Var> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(ad::Var{&t, static_cast<std::int32_t>(i)});
  return v;
}

StateDataset clean_dataset(const SplitData& split, bool with_derivatives) {
  StateDataset ds;
  ds.trajectories = split.clean;
  if (with_derivatives)
    for (const auto& tr : split.clean) ds.derivatives.push_back(exact_derivatives(systems::MassSpring(), tr));
  return ds;
}

struct DeskData {
  SplitData train, test;
};

const DeskData& mass_spring_desk_data() {
  static const DeskData data = [] {
    DatasetSpec spec = DatasetSpec::defaults(SystemKind::mass_spring);
    spec.n_train = 500;
    spec.n_test = 100;
    spec.seed = 2024;
    spec.render_frames = false;
    return DeskData{generate_split(spec, true), generate_split(spec, false)};
  }();
  return data;
}

const LearnerResult& rollout_trained() {
  static const LearnerResult r = [] {
    LearnerConfig cfg;
    cfg.mode = LearnerMode::rollout;
    cfg.hidden = 32;
    cfg.steps = 3000;
    cfg.eval_every = 3000;
    cfg.eval_trajectories = 10;
    cfg.seed = 1;
    const StateDataset train = clean_dataset(mass_spring_desk_data().train, false);
    return train_learner(train, nullptr, cfg);
  }();
  return r;
}

template <EnergyFunction H>
double mean_rollout_variance(const H& h, const std::vector<Trajectory>& refs, Integrator kind) {
  double acc = 0.0;
  for (const auto& tr : refs) acc += hamiltonian_variance(h, rollout(h, tr.states[0], {kind, 0.125, 30}));
  return acc / static_cast<double>(refs.size());
}

// ---------------------------------------------------------------------------
// Criteria

Outcome criterion_symplecticity() {
  RngStream rng(9001);
  double worst = 0.0;
  const auto sweep = [&](const auto& h, const std::function<PhaseState()>& draw) {
    for (int i = 0; i < 50; ++i) worst = std::max(worst, std::abs(fd_leapfrog_det(h, draw(), 0.125) - 1.0));
  };
  for (SystemKind k : {SystemKind::mass_spring, SystemKind::pendulum}) {
    const SystemSpec sys = SystemSpec::defaults(k);
    sweep(sys.energy(), [&] { return sample_initial_state(sys, default_radius_range(k), rng); });
  }
  for (int n : {2, 3}) {
    const systems::NBody h(systems::NBodyParams::uniform(n));
    const SystemSpec sys = SystemSpec::defaults(n == 2 ? SystemKind::two_body : SystemKind::three_body);
    sweep(h, [&] {
      PhaseState s;
      do {
        s = sample_initial_state(sys, default_radius_range(sys.kind), rng);
      } while (min_pair_distance(s) < 0.2 || min_pair_distance(leapfrog_step(h, s, 0.125)) < 0.2);
      return s;
    });
  }
  RngStream init(77);
  const SeparableHamiltonianModel learned = SeparableHamiltonianModel::random(2, 32, init);
  sweep(learned, [&] { return PhaseState(sample_gaussian(rng, 2, 0, 1), sample_gaussian(rng, 2, 0, 1)); });
  return {worst < 1e-6, "max |det J - 1| = " + fmt(worst) + " over 5 x 50 states (tol 1e-6)"};
}

Outcome criterion_reversibility() {
  double lf = 0.0, eu = INFINITY;
  const std::vector<std::pair<AnyEnergy, PhaseState>> cases{
      {systems::MassSpring(), PhaseState({0.45}, {0.8})}, {systems::Pendulum(), PhaseState({-1.7}, {0.4})}};
  for (const auto& [h, s0] : cases) {
    const auto round_trip = [&](Integrator k) {
      const Trajectory f = rollout(h, s0, {k, 0.125, 100});
      return max_abs_diff(rollout(h, f.states.back(), {k, -0.125, 100}).states.back(), s0);
    };
    lf = std::max(lf, round_trip(Integrator::leapfrog));
    eu = std::min(eu, round_trip(Integrator::euler));
  }
  return {lf < 1e-9 && eu > 1e-4, "leapfrog max err " + fmt(lf) + " (< 1e-9), euler min err " + fmt(eu) + " (> 1e-4)"};
}

Outcome criterion_energy_ordering() {
  const auto& test = mass_spring_desk_data().test.clean;
  const systems::MassSpring h;
  const double a_lf = mean_rollout_variance(h, test, Integrator::leapfrog);
  const double a_eu = mean_rollout_variance(h, test, Integrator::euler);
  const LearnerResult& r = rollout_trained();
  const double l_lf = mean_rollout_variance(r.model, test, Integrator::leapfrog);
  const double l_eu = mean_rollout_variance(r.model, test, Integrator::euler);
  const bool ok = !r.diverged && a_eu >= 10 * a_lf && l_eu >= 10 * l_lf;
  return {ok, "analytic var(H) leapfrog " + fmt(a_lf) + " vs euler " + fmt(a_eu) + "; learned leapfrog " + fmt(l_lf) +
                  " vs euler " + fmt(l_eu) + " (ratio >= 10)"};
}

Outcome criterion_rollout_learning() {
  const LearnerResult& r = rollout_trained();
  const StateDataset test = clean_dataset(mass_spring_desk_data().test, false);
  const double mse = evaluate_learner(r.model, test).test_mse;
  return {!r.diverged && mse < 1e-3, "held-out 30-step rollout MSE " + fmt(mse) + " (< 1e-3)"};
}

Outcome criterion_hnn_learning() {
  LearnerConfig cfg;
  cfg.mode = LearnerMode::hnn;
  cfg.hidden = 32;
  cfg.steps = 3000;
  cfg.eval_every = 3000;
  cfg.eval_trajectories = 10;
  cfg.seed = 2;
  const LearnerResult r = train_learner(clean_dataset(mass_spring_desk_data().train, true), nullptr, cfg);
  const systems::MassSpring truth;
  double err = 0.0;
  std::size_t n = 0;
  for (const auto& tr : mass_spring_desk_data().test.clean)
    for (const auto& s : tr.states) {
      const Vec dq = truth.grad_p(s), dp_neg = truth.grad_q(s);
      const Vec gp = r.model.grad_p(s), gq = r.model.grad_q(s);
      err += (gp[0] - dq[0]) * (gp[0] - dq[0]) + (gq[0] - dp_neg[0]) * (gq[0] - dp_neg[0]);
      ++n;
    }
  err /= static_cast<double>(n);
  return {!r.diverged && err < 1e-2, "held-out vector-field error " + fmt(err) + " (< 1e-2)"};
}

template <class Model>
double grid_mass(const Model& m, double q_half, double p_half, int n) {
  const Grid2D g{-q_half, q_half, -p_half, p_half, n, n};
  return evaluate_grid(g, [&](double q, double p) { return std::exp(m.log_joint(PhaseState({q}, {p}))); }).mass();
}

Outcome criterion_nhf_density() {
  const GaussianMixture target = GaussianMixture::named("mixture2");
  RngStream data_rng(31), test_rng(32);
  const std::vector<Vec> train = target.sample(data_rng, 2000);
  const std::vector<Vec> test = target.sample(test_rng, 500);
  double analytic = 0.0;
  for (const Vec& x : test) analytic -= target.log_density(x) / static_cast<double>(test.size());

  NhfConfig nc;
  nc.n_hamiltonians = 2;
  nc.leapfrog_steps = 2;
  nc.learn_dt = true;
  nc.train.steps = 2000;
  nc.train.seed = 5;
  const NhfTrainResult nhf = train_nhf(train, nc);
  RnvpConfig rc;
  rc.n_layers = 2;
  rc.train = nc.train;
  const RnvpTrainResult rnvp = train_rnvp(train, rc);

  const double nll_nhf = mean_nll_1d(nhf.model, test);
  const double nll_rnvp = mean_nll_1d(rnvp.model, test);
  // Grid spans five sample standard deviations of the momentum marginal.
  RngStream srng(33);
  double sq = 0.0;
  for (int i = 0; i < 4000; ++i) sq += std::pow(nhf.model.sample(srng).p[0], 2) / 4000.0;
  const double p_half = std::max(4.0, 5.0 * std::sqrt(sq));
  const double mass = grid_mass(nhf.model, 5.0, p_half, 300);
  const bool ok = !nhf.stats.diverged && !rnvp.stats.diverged && nll_nhf - analytic <= 0.3 &&
                  std::abs(mass - 1.0) <= 0.02 && std::abs(nll_rnvp - nll_nhf) <= 0.3;
  return {ok, "NLL nhf " + fmt(nll_nhf) + ", analytic " + fmt(analytic) + " (gap <= 0.3), rnvp " + fmt(nll_rnvp) +
                  " (within 0.3 of nhf), grid mass " + fmt(mass) + " (1 +- 0.02)"};
}

Outcome criterion_elbo() {
  const FlowStack stack = FlowStack::identity(1, 2, 8);
  const PriorSpec prior = PriorSpec::standard_normal();
  const double qT = -1.3;
  const double exact = -0.5 * qT * qT - 0.5 * std::log(2 * std::numbers::pi);
  RngStream rng(4242);
  const ElboEstimate good = elbo_estimate(stack, prior, GaussianEncoder::constant(1, 0.0, 1.0), Vec{qT}, rng, 10000);
  const ElboEstimate bad = elbo_estimate(stack, prior, GaussianEncoder::constant(1, -1.0, 1.0), Vec{qT}, rng, 10000);
  const double gap = exact - bad.mean;
  const bool ok = std::abs(good.mean - exact) <= 3 * good.std_error && std::abs(gap - 0.5) <= 0.05;
  return {ok, "exact-encoder |ELBO - log p| " + fmt(std::abs(good.mean - exact)) + " (<= 3 se = " +
                  fmt(3 * good.std_error) + "), shifted-encoder gap " + fmt(gap) + " (0.5 +- 0.05)"};
}

Outcome criterion_gradients() {
  RngStream rng(555);
  double hnn = 0.0, roll = 0.0, nelbo = 0.0;
  {
    RngStream init(1);
    SeparableHamiltonianModel m = SeparableHamiltonianModel::random(1, 16, init);
    const PhaseState s({0.7}, {-0.2});
    const Vec dq{-0.4}, dp{-1.4};
    const auto loss = [&] {
      ad::Tape t;
      return t.scalar_value(hnn_loss(m, s, dq, dp, t));
    };
    ad::Tape t;
    const ad::Var l = hnn_loss(m, s, dq, dp, t);
    const ParamList params = m.params();
    hnn = directional_check(params, t.gradients(l, leading_vars(t, params.size())), loss, rng, 20);
  }
  {
    RngStream init(2);
    SeparableHamiltonianModel m = SeparableHamiltonianModel::random(1, 16, init);
    const Trajectory target = mass_spring_desk_data().train.clean[3];
    const auto loss = [&] {
      ad::Tape t;
      return t.scalar_value(rollout_loss(m, target, t));
    };
    ad::Tape t;
    const ad::Var l = rollout_loss(m, target, t);
    const ParamList params = m.params();
    roll = directional_check(params, t.gradients(l, leading_vars(t, params.size())), loss, rng, 20);
  }
  {
    RngStream init(3);
    NhfModel model{FlowStack::random(1, 2, 12, init), GaussianEncoder::random(1, 12, init), PriorSpec::standard_normal()};
    ParamList params = model.flow_params();
    for (Tensor* p : model.encoder.params()) params.push_back(p);
    const std::vector<std::pair<double, double>> points{{1.8, 0.3}, {-2.1, -1.0}, {0.2, 0.7}};
    const auto build = [&](ad::Tape& t) {
      const auto vars = bind_params(t, params);
      std::size_t cursor = 0;
      const auto lj = model.log_joint_graph(t, vars, cursor);
      const EncoderVars enc = encoder_vars_from(vars, cursor, model.encoder);
      ad::Var total = t.scalar(0.0);
      for (const auto& [q, eps] : points)
        total = t.add(total, elbo_graph(lj, enc, t.constant(Vec{q}), t.constant(Vec{eps})));
      return std::pair{vars, t.scale(-1.0 / points.size(), total)};
    };
    const auto loss = [&] {
      ad::Tape t;
      return t.scalar_value(build(t).second);
    };
    ad::Tape t;
    const auto [vars, l] = build(t);
    nelbo = directional_check(params, t.gradients(l, vars), loss, rng, 20);
  }
  const double worst = std::max({hnn, roll, nelbo});
  return {worst < 1e-4, "worst relative error: hnn " + fmt(hnn) + ", rollout " + fmt(roll) + ", -elbo " + fmt(nelbo) +
                            " (< 1e-4)"};
}

Outcome criterion_dataset() {
  DatasetSpec spec = DatasetSpec::defaults(SystemKind::mass_spring);
  spec.n_train = 1000;
  spec.n_test = 200;
  spec.seed = 8;
  spec.render_frames = false;
  const fs::path root = fs::temp_directory_path() / "hamflow_acceptance";
  fs::remove_all(root);
  write_dataset(spec, root / "a");
  write_dataset(spec, root / "b");
  const LoadedDataset ds = read_dataset(root / "a");
  std::vector<double> radii;
  double drift = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const SplitData* split : {&ds.train, &ds.test})
    for (std::size_t i = 0; i < split->clean.size(); ++i) {
      const Trajectory& c = split->clean[i];
      radii.push_back(std::hypot(c.states[0].q[0], c.states[0].p[0]));
      drift = std::max(drift, relative_energy_drift(spec.system.energy(), c));
      for (std::size_t t = 0; t < c.size(); ++t) {
        sq += std::pow(split->noisy[i].states[t].q[0] - c.states[t].q[0], 2) +
              std::pow(split->noisy[i].states[t].p[0] - c.states[t].p[0], 2);
        n += 2;
      }
    }
  const double ks = ks_statistic_uniform(radii, 0.1, 1.0), crit = ks_critical_value(radii.size(), 0.01);
  const double noise = std::sqrt(sq / static_cast<double>(n));
  bool same = true;
  for (const char* f : {"train/states_clean.f64", "train/states_noisy.f64", "test/states_clean.f64",
                        "test/states_noisy.f64"})
    same = same && io::read_bytes(root / "a" / f) == io::read_bytes(root / "b" / f);
  fs::remove_all(root);
  const bool ok = ks < crit && drift < 1e-8 && std::abs(noise - 0.1) <= 0.002 && same;
  return {ok, "KS " + fmt(ks) + " (< " + fmt(crit) + "), drift " + fmt(drift) + " (< 1e-8), noise std " + fmt(noise) +
                  " (0.1 +- 2%), regeneration " + (same ? "byte-identical" : "DIFFERS")};
}

Outcome criterion_selftest() {
  const fs::path log = fs::temp_directory_path() / "hamflow_acceptance_selftest.log";
  const std::string cmd = std::string(HAMFLOW_CLI_PATH) + " selftest > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code == 0, "hamflow selftest exit code " + std::to_string(code)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  // Criterion 4 has two parts with a budget each; 3 and 4a share the trained model.
  const std::vector<Criterion> criteria{
      {1, "symplecticity", 10, criterion_symplecticity},
      {2, "reversibility", 1, criterion_reversibility},
      {3, "energy ordering", 60, criterion_energy_ordering},
      {4, "rollout learning", 300, criterion_rollout_learning},
      {4, "hnn learning", 300, criterion_hnn_learning},
      {5, "nhf density", 600, criterion_nhf_density},
      {6, "elbo bound", 10, criterion_elbo},
      {7, "gradient integrity", 30, criterion_gradients},
      {8, "dataset fidelity", 120, criterion_dataset},
      {9, "selftest", 600, criterion_selftest},
  };
  bool all = true;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.passed && in_time;
    all = all && pass;
    std::printf("%s  criterion %d  %-18s %8.2fs / %.0fs  %s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, c.budget_s,
                o.detail.c_str(), in_time ? "" : "  [over time budget]");
    std::fflush(stdout);
  }
  std::printf("%s\n", all ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
  return all ? 0 : 1;
}
