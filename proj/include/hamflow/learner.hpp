#pragma once

// Learning a separable Hamiltonian from phase-space trajectories, either by
// matching time derivatives (HNN loss) or by rolling the learned dynamics
// forward with leapfrog and matching observed states.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hamflow/core.hpp"
#include "hamflow/diffgraph.hpp"
#include "hamflow/integrators.hpp"
#include "hamflow/models.hpp"
#include "hamflow/training.hpp"

namespace hamflow {

// ---------------------------------------------------------------------------
// Dataset

/// Trajectories with optional per-state time derivatives, stored as
/// PhaseState{dq/dt, dp/dt}.
struct StateDataset {
  std::vector<Trajectory> trajectories;
  std::vector<std::vector<PhaseState>> derivatives;

  bool has_derivatives() const { return !derivatives.empty(); }
  std::size_t dim() const { return trajectories.empty() ? 0 : trajectories.front().dim(); }

  void validate() const {
    if (trajectories.empty()) throw std::invalid_argument("StateDataset: no trajectories");
    for (const auto& tr : trajectories) {
      if (tr.size() < 2) throw std::invalid_argument("StateDataset: trajectories need at least 2 states");
      if (tr.dim() != dim()) throw ShapeError("StateDataset: inconsistent state dimension");
      if (tr.dt != trajectories.front().dt) throw std::invalid_argument("StateDataset: mixed dt");
      tr.validate();
    }
    if (has_derivatives()) {
      if (derivatives.size() != trajectories.size()) throw ShapeError("StateDataset: derivative count mismatch");
      for (std::size_t i = 0; i < trajectories.size(); ++i)
        if (derivatives[i].size() != trajectories[i].size())
          throw ShapeError("StateDataset: derivative length mismatch in trajectory " + std::to_string(i));
    }
  }
};

/// Exact (dq/dt, dp/dt) = (dH/dp, -dH/dq) along a trajectory.
template <EnergyFunction H>
std::vector<PhaseState> exact_derivatives(const H& h, const Trajectory& traj) {
  std::vector<PhaseState> out;
  out.reserve(traj.size());
  for (const auto& s : traj.states) {
    Vec dp = h.grad_q(s);
    for (double& v : dp) v = -v;
    out.emplace_back(h.grad_p(s), std::move(dp));
  }
  return out;
}

struct DerivativeSample {
  PhaseState state;
  PhaseState target;  // {dq/dt, dp/dt}
};

/// (state, derivative) pairs. Without stored derivatives the target at t is
/// the forward difference (s_{t+1} - s_t) / dt, so the last state is skipped.
inline std::vector<DerivativeSample> derivative_samples(const StateDataset& ds) {
  std::vector<DerivativeSample> out;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const Trajectory& tr = ds.trajectories[i];
    if (ds.has_derivatives()) {
      for (std::size_t t = 0; t < tr.size(); ++t) out.push_back({tr.states[t], ds.derivatives[i][t]});
      continue;
    }
    for (std::size_t t = 0; t + 1 < tr.size(); ++t) {
      const PhaseState& a = tr.states[t];
      const PhaseState& b = tr.states[t + 1];
      PhaseState d(Vec(a.dim()), Vec(a.dim()));
      for (std::size_t k = 0; k < a.dim(); ++k) {
        d.q[k] = (b.q[k] - a.q[k]) / tr.dt;
        d.p[k] = (b.p[k] - a.p[k]) / tr.dt;
      }
      out.push_back({a, std::move(d)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

/// Model parameters bound as leaves on a tape, with structured views.
struct HamiltonianBinding {
  std::vector<ad::Var> flat;
  HamiltonianVars vars;
};

inline HamiltonianBinding bind_hamiltonian(ad::Tape& tape, SeparableHamiltonianModel& m) {
  HamiltonianBinding b;
  b.flat = bind_params(tape, m.params());
  std::size_t cursor = 0;
  b.vars = hamiltonian_vars_from(b.flat, cursor, m);
  return b;
}

/// 1/2 [ |dK/dp - dq/dt|^2 + |dV/dq + dp/dt|^2 ]
inline ad::Var hnn_loss(const HamiltonianVars& m, GraphState s, ad::Var dq_dt, ad::Var dp_dt) {
  ad::Tape& t = *s.q.tape;
  if (t.numel(s.q) != t.numel(dq_dt) || t.numel(s.p) != t.numel(dp_dt))
    throw ShapeError("hnn_loss: target dimension does not match state");
  const ad::Var rq = t.sub(kinetic_grad(m, s.p), dq_dt);
  const ad::Var rp = t.add(potential_grad(m, s.q), dp_dt);
  return t.scale(0.5, t.add(t.dot(rq, rq), t.dot(rp, rp)));
}

/// Binds `m` on `tape` and builds the loss for one state with constant targets.
inline ad::Var hnn_loss(SeparableHamiltonianModel& m, const PhaseState& s, const Vec& dq_dt, const Vec& dp_dt,
                        ad::Tape& tape) {
  if (s.dim() != m.dim() || dq_dt.size() != s.dim() || dp_dt.size() != s.dim())
    throw ShapeError("hnn_loss: dimension mismatch");
  const HamiltonianBinding b = bind_hamiltonian(tape, m);
  return hnn_loss(b.vars, {tape.constant(s.q), tape.constant(s.p)}, tape.constant(dq_dt), tape.constant(dp_dt));
}

/// Plain evaluation of the HNN loss.
template <EnergyFunction H>
double hnn_loss_value(const H& h, const PhaseState& s, const Vec& dq_dt, const Vec& dp_dt) {
  const Vec gp = h.grad_p(s), gq = h.grad_q(s);
  if (gp.size() != dq_dt.size() || gq.size() != dp_dt.size()) throw ShapeError("hnn_loss: dimension mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < gp.size(); ++k) {
    acc += (gp[k] - dq_dt[k]) * (gp[k] - dq_dt[k]);
    acc += (gq[k] + dp_dt[k]) * (gq[k] + dp_dt[k]);
  }
  return 0.5 * acc;
}

/// sum_k (p_t - (q_{t+1} - q_t))^2
inline double coordinate_constraint_loss(std::span<const double> q_t, std::span<const double> q_t1,
                                         std::span<const double> p_t) {
  if (q_t.size() != q_t1.size() || q_t.size() != p_t.size()) throw ShapeError("coordinate_constraint_loss: dims");
  double acc = 0.0;
  for (std::size_t k = 0; k < q_t.size(); ++k) {
    const double r = p_t[k] - (q_t1[k] - q_t[k]);
    acc += r * r;
  }
  return acc;
}

inline ad::Var coordinate_constraint_loss(ad::Var q_t, ad::Var q_t1, ad::Var p_t) {
  ad::Tape& t = *q_t.tape;
  const ad::Var r = t.sub(p_t, t.sub(q_t1, q_t));
  return t.dot(r, r);
}

/// Mean over steps 1..T and coordinates of (rollout_t - observed_t)^2, where
/// the rollout starts at `s0` and observations are graph nodes.
inline ad::Var rollout_loss(const HamiltonianVars& m, GraphState s0, std::span<const GraphState> observed,
                            ad::Var dt) {
  ad::Tape& t = *s0.q.tape;
  if (observed.empty()) throw std::invalid_argument("rollout_loss: need at least one observed step");
  const auto pred = leapfrog_graph_rollout(m, s0, dt, static_cast<int>(observed.size()));
  ad::Var acc = t.scalar(0.0);
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const ad::Var dq = t.sub(pred[k + 1].q, observed[k].q);
    const ad::Var dp = t.sub(pred[k + 1].p, observed[k].p);
    acc = t.add(acc, t.add(t.dot(dq, dq), t.dot(dp, dp)));
  }
  const double denom = static_cast<double>(observed.size()) * 2.0 * static_cast<double>(t.numel(s0.q));
  return t.scale(1.0 / denom, acc);
}

/// Binds `m` on `tape` and builds the rollout loss against a fixed trajectory.
/// A non-finite rollout raises NumericalError carrying the step index.
inline ad::Var rollout_loss(SeparableHamiltonianModel& m, const Trajectory& traj, ad::Tape& tape) {
  if (traj.size() < 2) throw std::invalid_argument("rollout_loss: trajectory needs at least 2 states");
  if (traj.dim() != m.dim()) throw ShapeError("rollout_loss: dimension mismatch");
  const HamiltonianBinding b = bind_hamiltonian(tape, m);
  const ad::Var dt = tape.scalar(traj.dt);
  const ad::Var half = tape.scale(0.5, dt);
  GraphState s{tape.constant(traj.states[0].q), tape.constant(traj.states[0].p)};
  ad::Var acc = tape.scalar(0.0);
  try {
    ad::Var dv = potential_grad(b.vars, s.q);
    for (std::size_t k = 1; k < traj.size(); ++k) {
      try {
        s.p = tape.sub(s.p, tape.scale(half, dv));
        s.q = tape.add(s.q, tape.scale(dt, kinetic_grad(b.vars, s.p)));
        dv = potential_grad(b.vars, s.q);
        s.p = tape.sub(s.p, tape.scale(half, dv));
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("rollout_loss: ") + e.what(), static_cast<std::ptrdiff_t>(k));
      }
      const ad::Var dq = tape.sub(s.q, tape.constant(traj.states[k].q));
      const ad::Var dp = tape.sub(s.p, tape.constant(traj.states[k].p));
      acc = tape.add(acc, tape.add(tape.dot(dq, dq), tape.dot(dp, dp)));
    }
  } catch (const NumericalError& e) {
    if (e.step() >= 0) throw;
    throw NumericalError(std::string("rollout_loss: ") + e.what(), 0);
  }
  const double denom = static_cast<double>(traj.size() - 1) * 2.0 * static_cast<double>(traj.dim());
  return tape.scale(1.0 / denom, acc);
}

/// Mean squared error of the leapfrog rollout of `h` from the first state of
/// `target`, over steps 1..T and all coordinates.
template <EnergyFunction H>
double rollout_mse(const H& h, const Trajectory& target) {
  if (target.size() < 2) throw std::invalid_argument("rollout_mse: trajectory needs at least 2 states");
  const Trajectory pred =
      rollout(h, target.states[0], {Integrator::leapfrog, target.dt, static_cast<int>(target.size()) - 1});
  double acc = 0.0;
  for (std::size_t k = 1; k < target.size(); ++k)
    for (std::size_t i = 0; i < target.dim(); ++i) {
      const double dq = pred.states[k].q[i] - target.states[k].q[i];
      const double dp = pred.states[k].p[i] - target.states[k].p[i];
      acc += dq * dq + dp * dp;
    }
  return acc / (static_cast<double>(target.size() - 1) * 2.0 * static_cast<double>(target.dim()));
}

// ---------------------------------------------------------------------------
// Training

enum class LearnerMode { hnn, rollout };

inline const char* to_string(LearnerMode m) { return m == LearnerMode::hnn ? "hnn" : "rollout"; }

inline LearnerMode parse_learner_mode(const std::string& s) {
  if (s == "hnn") return LearnerMode::hnn;
  if (s == "rollout") return LearnerMode::rollout;
  throw std::invalid_argument("unknown learner mode '" + s + "'");
}

struct LearnerConfig {
  LearnerMode mode = LearnerMode::rollout;
  int hidden = 32;
  int depth = 2;
  Activation activation = Activation::softplus;
  double lr = 3e-3;
  double lr_final_fraction = 0.05;
  int steps = 3000;
  int batch = 16;
  int window = 30;  // rollout truncation length, clamped to trajectory length
  int eval_every = 100;
  int eval_trajectories = 50;
  int threads = 1;
  std::uint64_t seed = 0;
  double curriculum_fraction = 0.5;  // share of steps over which the horizon grows to `window`
  bool observe_momentum = true;  // false: momenta are inferred as q_{t+1} - q_t
  double cc_weight = 1.0;        // coordinate-constraint weight when momenta are latent
};

struct LearnerMetrics {
  int step = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  double hamiltonian_variance = 0.0;
};

struct LearnerResult {
  SeparableHamiltonianModel model;
  std::vector<LearnerMetrics> metrics;
  std::vector<double> curve;  // training loss per step
  bool diverged = false;
  std::string message;
};

struct LearnerEvaluation {
  double test_mse = 0.0;
  double hamiltonian_variance = 0.0;
};

/// Rollout MSE and variance of the learned energy along the learned leapfrog
/// rollout, averaged over (at most `max_trajectories`) held-out trajectories.
template <EnergyFunction H>
LearnerEvaluation evaluate_learner(const H& h, const StateDataset& test, int max_trajectories = -1) {
  const std::size_t n = max_trajectories < 0
                            ? test.trajectories.size()
                            : std::min(test.trajectories.size(), static_cast<std::size_t>(max_trajectories));
  if (n == 0) throw std::invalid_argument("evaluate_learner: empty test set");
  LearnerEvaluation ev;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& tr = test.trajectories[i];
    ev.test_mse += rollout_mse(h, tr);
    const Trajectory pred = rollout(h, tr.states[0], {Integrator::leapfrog, tr.dt, static_cast<int>(tr.size()) - 1});
    double mean = 0.0, sq = 0.0;
    for (const auto& s : pred.states) mean += h.energy(s);
    mean /= static_cast<double>(pred.size());
    for (const auto& s : pred.states) sq += (h.energy(s) - mean) * (h.energy(s) - mean);
    ev.hamiltonian_variance += sq / static_cast<double>(pred.size());
  }
  ev.test_mse /= static_cast<double>(n);
  ev.hamiltonian_variance /= static_cast<double>(n);
  return ev;
}

/// Loss horizon at `step`: grows linearly from 1 to `window` over the first
/// `fraction` of training, then stays at `window`.
inline int rollout_horizon(int window, double fraction, int step, int total_steps) {
  if (fraction <= 0.0 || total_steps <= 0) return window;
  const double ramp = fraction * total_steps;
  const double h = 1.0 + (window - 1.0) * std::min(1.0, step / ramp);
  return std::clamp(static_cast<int>(std::floor(h)), 1, window);
}

inline LearnerResult train_learner(const StateDataset& data, const StateDataset* test, const LearnerConfig& cfg) {
  data.validate();
  if (cfg.batch < 1 || cfg.steps < 0 || cfg.eval_every < 1)
    throw std::invalid_argument("train_learner: batch and eval_every must be >= 1, steps >= 0");
  const int d = static_cast<int>(data.dim());
  const double dt = data.trajectories.front().dt;

  RngStream rng(cfg.seed);
  RngStream init = rng.fork(0x48414d);
  LearnerResult result;
  result.model = SeparableHamiltonianModel::random(d, cfg.hidden, init, cfg.depth, cfg.activation);
  ParamList params = result.model.params();

  std::size_t min_len = data.trajectories.front().size();
  for (const auto& tr : data.trajectories) min_len = std::min(min_len, tr.size());
  const int window = std::max(1, std::min(cfg.window, static_cast<int>(min_len) - 1));

  std::vector<DerivativeSample> deriv;
  if (cfg.mode == LearnerMode::hnn) deriv = derivative_samples(data);

  const std::size_t n_workers = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.threads)), static_cast<std::size_t>(cfg.batch)));
  const auto slices = partition_batch(static_cast<std::size_t>(cfg.batch), n_workers);
  std::vector<GraphWorker> workers(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    GraphWorker& wk = workers[w];
    ad::Tape& t = *wk.tape;
    wk.params = bind_params(t, params);
    std::size_t cursor = 0;
    const HamiltonianVars m = hamiltonian_vars_from(wk.params, cursor, result.model);
    ad::Var total = t.scalar(0.0);
    const ad::Var dt_node = t.scalar(dt);
    // Per-step loss weights (rollout modes): 1 / (horizon * coordinates)
    // inside the current curriculum horizon, 0 beyond it.
    std::vector<ad::Var> step_weight;
    if (cfg.mode == LearnerMode::rollout)
      for (int k = 0; k < window; ++k) {
        step_weight.push_back(t.input(1));
        wk.inputs.push_back(step_weight.back());
      }
    for (std::size_t j = 0; j < slices[w]; ++j) {
      if (cfg.mode == LearnerMode::hnn) {
        const ad::Var q = t.input(d), p = t.input(d), dq = t.input(d), dp = t.input(d);
        wk.inputs.insert(wk.inputs.end(), {q, p, dq, dp});
        total = t.add(total, hnn_loss(m, {q, p}, dq, dp));
      } else if (cfg.observe_momentum) {
        const ad::Var q0 = t.input(d), p0 = t.input(d);
        wk.inputs.insert(wk.inputs.end(), {q0, p0});
        std::vector<GraphState> obs;
        for (int k = 0; k < window; ++k) {
          obs.push_back({t.input(d), t.input(d)});
          wk.inputs.insert(wk.inputs.end(), {obs.back().q, obs.back().p});
        }
        const auto pred = leapfrog_graph_rollout(m, {q0, p0}, dt_node, window);
        for (int k = 0; k < window; ++k) {
          const ad::Var dq = t.sub(pred[k + 1].q, obs[k].q);
          const ad::Var dp = t.sub(pred[k + 1].p, obs[k].p);
          total = t.add(total, t.scale(step_weight[k], t.add(t.dot(dq, dq), t.dot(dp, dp))));
        }
      } else {
        // Momenta are latent: p_0 = q_1 - q_0, the loss sees positions only,
        // and the coordinate constraint ties predicted p_t to q_{t+1} - q_t.
        std::vector<ad::Var> qs;
        for (int k = 0; k <= window; ++k) {
          qs.push_back(t.input(d));
          wk.inputs.push_back(qs.back());
        }
        const GraphState s0{qs[0], t.sub(qs[1], qs[0])};
        const auto pred = leapfrog_graph_rollout(m, s0, dt_node, window);
        for (int k = 1; k <= window; ++k) {
          const ad::Var r = t.sub(pred[k].q, qs[k]);
          ad::Var term = t.dot(r, r);
          if (k < window)
            term = t.add(term, t.scale(cfg.cc_weight, coordinate_constraint_loss(pred[k].q, pred[k + 1].q, pred[k].p)));
          total = t.add(total, t.scale(step_weight[k - 1], term));
        }
      }
    }
    wk.loss = t.scale(1.0 / cfg.batch, total);
  }

  // Minibatch values, drawn on the calling thread so the sequence of examples
  // does not depend on the thread count.
  std::vector<std::vector<const Vec*>> slot_values(static_cast<std::size_t>(cfg.batch));
  std::vector<std::size_t> offset(n_workers, 0);
  for (std::size_t w = 1; w < n_workers; ++w) offset[w] = offset[w - 1] + slices[w - 1];

  AdamState adam;
  std::vector<Vec> grads;
  std::vector<Vec> last_good = snapshot(params);
  const auto record_metrics = [&](int step, double train_loss) {
    LearnerMetrics row{step, train_loss, 0.0, 0.0};
    if (test != nullptr && !test->trajectories.empty()) {
      const LearnerEvaluation ev = evaluate_learner(result.model, *test, cfg.eval_trajectories);
      row.test_mse = ev.test_mse;
      row.hamiltonian_variance = ev.hamiltonian_variance;
    }
    result.metrics.push_back(row);
  };

  const double coords = cfg.observe_momentum ? 2.0 * d : static_cast<double>(d);
  for (int step = 0; step < cfg.steps; ++step) {
    const int horizon = rollout_horizon(window, cfg.curriculum_fraction, step, cfg.steps);
    for (int j = 0; j < cfg.batch; ++j) {
      auto& vals = slot_values[j];
      vals.clear();
      if (cfg.mode == LearnerMode::hnn) {
        const auto& smp = deriv[std::min(deriv.size() - 1, static_cast<std::size_t>(rng.uniform() * deriv.size()))];
        vals = {&smp.state.q, &smp.state.p, &smp.target.q, &smp.target.p};
        continue;
      }
      const auto& tr = data.trajectories[std::min(data.trajectories.size() - 1,
                                                  static_cast<std::size_t>(rng.uniform() * data.trajectories.size()))];
      const std::size_t n_start = tr.size() - static_cast<std::size_t>(window);
      const std::size_t t0 = std::min(n_start - 1, static_cast<std::size_t>(rng.uniform() * n_start));
      for (int k = 0; k <= window; ++k) {
        vals.push_back(&tr.states[t0 + k].q);
        if (cfg.observe_momentum) vals.push_back(&tr.states[t0 + k].p);
      }
    }
    try {
      const double loss = evaluate_workers(
          workers, params,
          [&](std::size_t w, GraphWorker& wk) {
            if (cfg.mode == LearnerMode::rollout)
              for (int k = 0; k < window; ++k) {
                const double wk_val = k < horizon ? 1.0 / (horizon * coords) : 0.0;
                wk.tape->bind(wk.inputs[k], std::span<const double>(&wk_val, 1));
              }
            std::size_t in = cfg.mode == LearnerMode::rollout ? static_cast<std::size_t>(window) : 0;
            for (std::size_t j = 0; j < slices[w]; ++j)
              for (const Vec* v : slot_values[offset[w] + j]) wk.tape->bind(wk.inputs[in++], *v);
          },
          cfg.threads, grads);
      if (!std::isfinite(loss)) throw NumericalError("non-finite loss", step);
      if (step % cfg.eval_every == 0) record_metrics(step, loss);
      adam.lr = cosine_lr(cfg.lr, cfg.lr_final_fraction, step, cfg.steps);
      adam_step(adam, params, grads);
      for (const Tensor* t : params)
        if (!all_finite(t->data)) throw NumericalError("non-finite parameter", step);
      result.curve.push_back(loss);
      last_good = snapshot(params);
    } catch (const NumericalError& e) {
      restore(params, last_good);
      result.diverged = true;
      result.message = std::string("training diverged at step ") + std::to_string(step) + ": " + e.what();
      return result;
    }
  }
  record_metrics(cfg.steps, result.curve.empty() ? 0.0 : result.curve.back());
  return result;
}

}  // namespace hamflow
