#pragma once

// Neural Hamiltonian Flows: a stack of learned separable Hamiltonians, each
// integrated for a few leapfrog steps, used as a volume-preserving
// normalizing flow on phase space. Data are positions q; the momentum is a
// latent variable marginalized through an amortized Gaussian encoder.
//
// The affine-coupling (RNVP) baseline is trained in the same augmented space
// with the same encoder so the two are directly comparable.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "hamflow/core.hpp"
#include "hamflow/diffgraph.hpp"
#include "hamflow/integrators.hpp"
#include "hamflow/models.hpp"
#include "hamflow/training.hpp"

namespace hamflow {

// ---------------------------------------------------------------------------
// Priors

enum class PriorKind { soft_uniform, standard_normal };

inline const char* to_string(PriorKind k) { return k == PriorKind::soft_uniform ? "soft_uniform" : "standard_normal"; }

inline PriorKind parse_prior_kind(const std::string& s) {
  if (s == "soft_uniform") return PriorKind::soft_uniform;
  if (s == "standard_normal" || s == "normal") return PriorKind::standard_normal;
  throw std::invalid_argument("unknown prior '" + s + "'");
}

/// Integral over the real line of sigmoid(beta (x + sigma/2)) sigmoid(-beta (x - sigma/2)),
/// by composite Simpson on a window outside which the integrand is below
/// exp(-60).
inline double soft_uniform_normalizer(double sigma, double beta, int intervals = 20000) {
  if (!(sigma > 0.0) || !(beta > 0.0)) throw std::invalid_argument("soft_uniform: sigma and beta must be > 0");
  const double a = 0.5 * sigma;
  const double lo = -a - 60.0 / beta, hi = a + 60.0 / beta;
  const auto f = [&](double x) {
    return std::exp(-ad::detail::softplus(-beta * (x + a)) - ad::detail::softplus(beta * (x - a)));
  };
  if (intervals % 2) ++intervals;
  const double h = (hi - lo) / intervals;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < intervals; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return acc * h / 3.0;
}

struct PriorSpec {
  PriorKind kind = PriorKind::standard_normal;
  double sigma = 1.0;
  double beta = 1.0;
  double log_z = 0.0;  // per-coordinate log-normalizer (soft_uniform)

  static PriorSpec standard_normal() { return {}; }
  static PriorSpec soft_uniform(double sigma, double beta) {
    PriorSpec p{PriorKind::soft_uniform, sigma, beta, 0.0};
    p.log_z = std::log(soft_uniform_normalizer(sigma, beta));
    return p;
  }

  void validate() const {
    if (kind == PriorKind::soft_uniform && (!(sigma > 0.0) || !(beta > 0.0)))
      throw std::invalid_argument("PriorSpec: soft_uniform needs sigma > 0 and beta > 0");
  }

  /// Sum over coordinates of the log-density.
  double log_density(std::span<const double> x) const {
    if (kind == PriorKind::standard_normal) {
      double acc = 0.0;
      for (double v : x) acc += -0.5 * v * v;
      return acc - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
    }
    const double a = 0.5 * sigma;
    double acc = 0.0;
    for (double v : x) acc -= ad::detail::softplus(-beta * (v + a)) + ad::detail::softplus(beta * (v - a));
    return acc - static_cast<double>(x.size()) * log_z;
  }

  double log_density(const PhaseState& s) const { return log_density(s.q) + log_density(s.p); }

  ad::Var log_density_graph(ad::Var x) const {
    ad::Tape& t = *x.tape;
    const double n = static_cast<double>(t.numel(x));
    if (kind == PriorKind::standard_normal)
      return t.add(t.scale(-0.5, t.dot(x, x)), t.scalar(-0.5 * n * std::log(2.0 * std::numbers::pi)));
    const int rows = static_cast<int>(t.numel(x));
    const double ba = beta * 0.5 * sigma;
    const ad::Var bx = t.scale(beta, x);
    const ad::Var left = t.softplus(t.neg(t.add(bx, t.filled(ba, rows))));
    const ad::Var right = t.softplus(t.sub(bx, t.filled(ba, rows)));
    return t.sub(t.neg(t.sum(t.add(left, right))), t.scalar(n * log_z));
  }

  ad::Var log_density_graph(GraphState s) const {
    return s.q.tape->add(log_density_graph(s.q), log_density_graph(s.p));
  }

  /// CDF of one soft-uniform coordinate, in closed form:
  /// [softplus(beta (x + a)) - softplus(beta (x - a))] / (2 beta a).
  double soft_uniform_cdf(double x) const {
    const double a = 0.5 * sigma;
    return (ad::detail::softplus(beta * (x + a)) - ad::detail::softplus(beta * (x - a))) / (2.0 * beta * a);
  }

  Vec sample(RngStream& rng, std::size_t n) const {
    if (kind == PriorKind::standard_normal) return sample_gaussian(rng, n, 0.0, 1.0);
    Vec out(n);
    const double a = 0.5 * sigma;
    for (double& v : out) {
      const double u = rng.uniform();
      double lo = -a - 80.0 / beta, hi = a + 80.0 / beta;
      for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (soft_uniform_cdf(mid) < u ? lo : hi) = mid;
      }
      v = 0.5 * (lo + hi);
    }
    return out;
  }

  PhaseState sample_state(RngStream& rng, std::size_t d) const {
    Vec x = sample(rng, 2 * d);
    return state_split(x);
  }
};

inline double soft_uniform_logpdf(const PriorSpec& prior, std::span<const double> s) {
  if (prior.kind != PriorKind::soft_uniform) throw std::invalid_argument("soft_uniform_logpdf: prior is not soft_uniform");
  return prior.log_density(s);
}

// ---------------------------------------------------------------------------
// FlowStack

struct FlowStack {
  std::vector<SeparableHamiltonianModel> hamiltonians;
  int leapfrog_steps = 2;
  Tensor log_dt{1, 1, std::log(0.125)};
  bool learn_dt = true;

  static FlowStack identity(int d, int n_hamiltonians, int hidden, int leapfrog_steps = 2, double dt = 0.125) {
    FlowStack f;
    for (int i = 0; i < n_hamiltonians; ++i) f.hamiltonians.push_back(SeparableHamiltonianModel::zeros(d, hidden));
    f.leapfrog_steps = leapfrog_steps;
    f.set_dt(dt);
    return f;
  }

  static FlowStack random(int d, int n_hamiltonians, int hidden, RngStream& rng, int leapfrog_steps = 2,
                          double dt = 0.125, int depth = 2, Activation act = Activation::softplus) {
    FlowStack f;
    for (int i = 0; i < n_hamiltonians; ++i)
      f.hamiltonians.push_back(SeparableHamiltonianModel::random(d, hidden, rng, depth, act));
    f.leapfrog_steps = leapfrog_steps;
    f.set_dt(dt);
    return f;
  }

  double dt() const { return std::exp(log_dt.data[0]); }
  void set_dt(double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("FlowStack: dt must be finite and > 0");
    log_dt.data[0] = std::log(dt);
  }
  int dim() const { return hamiltonians.empty() ? 0 : static_cast<int>(hamiltonians.front().dim()); }

  void validate() const {
    if (hamiltonians.empty()) throw std::invalid_argument("FlowStack: no Hamiltonians");
    if (leapfrog_steps < 1) throw std::invalid_argument("FlowStack: leapfrog_steps must be >= 1");
    if (!std::isfinite(log_dt.data[0])) throw NumericalError("FlowStack: non-finite dt");
    for (const auto& h : hamiltonians)
      if (static_cast<int>(h.dim()) != dim()) throw ShapeError("FlowStack: Hamiltonians disagree on dimension");
  }

  /// Hamiltonian parameters in stack order, then log_dt when it is learned.
  ParamList params() {
    ParamList out;
    for (auto& h : hamiltonians)
      for (Tensor* t : h.params()) out.push_back(t);
    if (learn_dt) out.push_back(&log_dt);
    return out;
  }
};

inline void check_flow_state(const FlowStack& f, const PhaseState& s) {
  if (static_cast<int>(s.dim()) != f.dim() || s.q.size() != s.p.size())
    throw ShapeError("flow: state dimension " + std::to_string(s.dim()) + " != stack dimension " +
                     std::to_string(f.dim()));
}

inline PhaseState flow_forward(const FlowStack& f, const PhaseState& s0) {
  check_flow_state(f, s0);
  const double dt = f.dt();
  PhaseState s = s0;
  for (const auto& h : f.hamiltonians)
    for (int k = 0; k < f.leapfrog_steps; ++k) s = leapfrog_step(h, s, dt);
  if (!s.valid()) throw NumericalError("flow_forward: non-finite state");
  return s;
}

inline PhaseState flow_inverse(const FlowStack& f, const PhaseState& sT) {
  check_flow_state(f, sT);
  const double dt = f.dt();
  PhaseState s = sT;
  for (auto it = f.hamiltonians.rbegin(); it != f.hamiltonians.rend(); ++it)
    for (int k = 0; k < f.leapfrog_steps; ++k) s = leapfrog_step(*it, s, -dt);
  if (!s.valid()) throw NumericalError("flow_inverse: non-finite state");
  return s;
}

/// log p(sT) = log pi(flow_inverse(sT)). No Jacobian term: every leapfrog
/// step has unit determinant.
inline double log_density(const FlowStack& f, const PriorSpec& prior, const PhaseState& sT) {
  return prior.log_density(flow_inverse(f, sT));
}

struct FlowVars {
  std::vector<HamiltonianVars> hamiltonians;
  ad::Var log_dt;
  int leapfrog_steps = 2;
};

/// Views over parameter leaves laid out as FlowStack::params(). A fixed dt
/// becomes a constant node on `tape`.
inline FlowVars flow_vars_from(ad::Tape& tape, std::span<const ad::Var> flat, std::size_t& cursor,
                               const FlowStack& f) {
  FlowVars v;
  for (const auto& h : f.hamiltonians) v.hamiltonians.push_back(hamiltonian_vars_from(flat, cursor, h));
  v.log_dt = f.learn_dt ? flat[cursor++] : tape.scalar(f.log_dt.data[0]);
  v.leapfrog_steps = f.leapfrog_steps;
  return v;
}

inline GraphState flow_forward_graph(const FlowVars& f, GraphState s) {
  ad::Tape& t = *s.q.tape;
  const ad::Var dt = t.exp(f.log_dt);
  for (const auto& h : f.hamiltonians) s = leapfrog_graph(h, s, dt, f.leapfrog_steps);
  return s;
}

inline GraphState flow_inverse_graph(const FlowVars& f, GraphState s) {
  ad::Tape& t = *s.q.tape;
  const ad::Var neg_dt = t.neg(t.exp(f.log_dt));
  for (auto it = f.hamiltonians.rbegin(); it != f.hamiltonians.rend(); ++it)
    s = leapfrog_graph(*it, s, neg_dt, f.leapfrog_steps);
  return s;
}

// ---------------------------------------------------------------------------
// ELBO

struct ElboEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int n_samples = 0;
};

/// Monte Carlo estimate of E_f[log p(qT, pT) - log f(pT | qT)] with pT drawn
/// from the encoder. `log_joint` maps a phase state to its model log-density.
template <class LogJoint>
ElboEstimate elbo_estimate(LogJoint&& log_joint, const GaussianEncoder& enc, std::span<const double> qT,
                           RngStream& rng, int n_samples) {
  if (n_samples < 1) throw std::invalid_argument("elbo: n_samples must be >= 1");
  const Vec q(qT.begin(), qT.end());
  const Vec mu = enc.mean(q), sd = enc.stddev(q);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Vec eps = sample_gaussian(rng, mu.size(), 0.0, 1.0);
    Vec p(mu.size());
    double log_f = -0.5 * static_cast<double>(mu.size()) * std::log(2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] = mu[k] + sd[k] * eps[k];
      log_f += -0.5 * eps[k] * eps[k] - std::log(sd[k]);
    }
    const double term = log_joint(PhaseState(q, std::move(p))) - log_f;
    if (!std::isfinite(term)) throw NumericalError("elbo: non-finite sample", i);
    sum += term;
    sum_sq += term * term;
  }
  const double n = n_samples;
  const double mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n), n_samples};
}

inline ElboEstimate elbo_estimate(const FlowStack& f, const PriorSpec& prior, const GaussianEncoder& enc,
                                  std::span<const double> qT, RngStream& rng, int n_samples) {
  return elbo_estimate([&](const PhaseState& s) { return log_density(f, prior, s); }, enc, qT, rng, n_samples);
}

inline double elbo(const FlowStack& f, const PriorSpec& prior, const GaussianEncoder& enc,
                   std::span<const double> qT, RngStream& rng, int n_samples) {
  return elbo_estimate(f, prior, enc, qT, rng, n_samples).mean;
}

/// Single-sample ELBO as a graph: noise `eps` is an input node.
template <class LogJointGraph>
ad::Var elbo_graph(LogJointGraph&& log_joint, const EncoderVars& enc, ad::Var qT, ad::Var eps) {
  const EncoderSample e = encoder_sample_graph(enc, qT, eps);
  return qT.tape->sub(log_joint(GraphState{qT, e.p}), e.log_prob);
}

inline ad::Var elbo_graph(const FlowVars& f, const PriorSpec& prior, const EncoderVars& enc, ad::Var qT,
                          ad::Var eps) {
  return elbo_graph([&](GraphState s) { return prior.log_density_graph(flow_inverse_graph(f, s)); }, enc, qT, eps);
}

// ---------------------------------------------------------------------------
// Models bundling flow, encoder and prior

struct NhfModel {
  FlowStack stack;
  GaussianEncoder encoder;
  PriorSpec prior;

  int dim() const { return stack.dim(); }
  ParamList flow_params() { return stack.params(); }
  double log_joint(const PhaseState& s) const { return log_density(stack, prior, s); }
  PhaseState sample(RngStream& rng) const {
    return flow_forward(stack, prior.sample_state(rng, static_cast<std::size_t>(dim())));
  }
  /// Builds a log-joint graph builder over parameter leaves in flow_params() order.
  std::function<ad::Var(GraphState)> log_joint_graph(ad::Tape& tape, std::span<const ad::Var> flat,
                                                     std::size_t& cursor) const {
    FlowVars fv = flow_vars_from(tape, flat, cursor, stack);
    const PriorSpec pr = prior;
    return [fv = std::move(fv), pr](GraphState s) { return pr.log_density_graph(flow_inverse_graph(fv, s)); };
  }
};

struct RnvpModel {
  RnvpFlow flow;
  GaussianEncoder encoder;
  PriorSpec prior;

  int dim() const { return flow.dim(); }
  ParamList flow_params() { return flow.params(); }
  double log_joint(const PhaseState& s) const {
    const RnvpResult r = rnvp_forward(flow, s);
    return prior.log_density(r.y) + r.logdet;
  }
  PhaseState sample(RngStream& rng) const {
    return rnvp_inverse(flow, prior.sample_state(rng, static_cast<std::size_t>(dim()))).y;
  }
  std::function<ad::Var(GraphState)> log_joint_graph(ad::Tape&, std::span<const ad::Var> flat,
                                                     std::size_t& cursor) const {
    auto layers = rnvp_vars_from(flat, cursor, flow);
    const PriorSpec pr = prior;
    return [layers = std::move(layers), pr](GraphState s) {
      const RnvpGraphResult r = rnvp_forward_graph(layers, s);
      return s.q.tape->add(pr.log_density_graph(r.y), r.logdet);
    };
  }
};

/// log p(q) = log of the integral over p of exp(log_joint(q, p)), by
/// trapezoid on [p_lo, p_hi]. One-dimensional q only.
template <class LogJoint>
double log_marginal_quadrature(LogJoint&& log_joint, double q, double p_lo = -8.0, double p_hi = 8.0,
                               int n = 321) {
  if (n < 2 || !(p_hi > p_lo)) throw std::invalid_argument("log_marginal_quadrature: bad grid");
  const double h = (p_hi - p_lo) / (n - 1);
  Vec lw(static_cast<std::size_t>(n));
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    lw[i] = log_joint(PhaseState({q}, {p_lo + i * h})) + std::log(w * h);
    mx = std::max(mx, lw[i]);
  }
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : lw) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

/// Mean negative log marginal likelihood over one-dimensional points.
template <class Model>
double mean_nll_1d(const Model& m, std::span<const Vec> points) {
  if (m.dim() != 1) throw ShapeError("mean_nll_1d: model must be one-dimensional");
  if (points.empty()) throw std::invalid_argument("mean_nll_1d: no points");
  double acc = 0.0;
  for (const Vec& x : points)
    acc -= log_marginal_quadrature([&](const PhaseState& s) { return m.log_joint(s); }, x.at(0));
  return acc / static_cast<double>(points.size());
}

// ---------------------------------------------------------------------------
// Training

struct FlowTrainConfig {
  int steps = 2000;
  int batch = 64;
  double lr = 3e-3;
  double lr_final_fraction = 0.1;
  int threads = 1;
  std::uint64_t seed = 0;
};

struct FlowTrainResult {
  std::vector<double> curve;  // negative ELBO per step
  bool diverged = false;
  std::string message;
};

/// Maximizes the mean single-sample ELBO over minibatches with Adam. On a
/// non-finite loss or gradient the last good parameters are restored and the
/// result is flagged as diverged.
template <class Model>
FlowTrainResult train_elbo(Model& model, std::span<const Vec> data, const FlowTrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch < 1 || cfg.steps < 0) throw std::invalid_argument("train: batch must be >= 1 and steps >= 0");
  const int d = model.dim();
  for (const Vec& x : data)
    if (static_cast<int>(x.size()) != d) throw ShapeError("train: data dimension does not match model");

  ParamList params = model.flow_params();
  const std::size_t n_flow = params.size();
  for (Tensor* t : model.encoder.params()) params.push_back(t);

  const std::size_t n_workers = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.threads)), static_cast<std::size_t>(cfg.batch)));
  const auto slices = partition_batch(static_cast<std::size_t>(cfg.batch), n_workers);
  std::vector<GraphWorker> workers(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    GraphWorker& wk = workers[w];
    ad::Tape& t = *wk.tape;
    wk.params = bind_params(t, params);
    std::size_t cursor = 0;
    const auto log_joint = model.log_joint_graph(t, wk.params, cursor);
    if (cursor != n_flow) throw std::logic_error("train: flow parameter layout mismatch");
    const EncoderVars enc = encoder_vars_from(wk.params, cursor, model.encoder);
    ad::Var total = t.scalar(0.0);
    for (std::size_t j = 0; j < slices[w]; ++j) {
      const ad::Var q = t.input(d), eps = t.input(d);
      wk.inputs.push_back(q);
      wk.inputs.push_back(eps);
      total = t.add(total, elbo_graph(log_joint, enc, q, eps));
    }
    wk.loss = t.scale(-1.0 / cfg.batch, total);
  }

  RngStream rng(cfg.seed);
  AdamState adam;
  adam.lr = cfg.lr;
  FlowTrainResult result;
  std::vector<Vec> grads;
  std::vector<Vec> batch_q(static_cast<std::size_t>(cfg.batch)), batch_eps(static_cast<std::size_t>(cfg.batch));
  std::vector<Vec> last_good = snapshot(params);
  for (int step = 0; step < cfg.steps; ++step) {
    for (int j = 0; j < cfg.batch; ++j) {
      const auto idx = static_cast<std::size_t>(rng.uniform() * static_cast<double>(data.size()));
      batch_q[j] = data[std::min(idx, data.size() - 1)];
      batch_eps[j] = sample_gaussian(rng, static_cast<std::size_t>(d), 0.0, 1.0);
    }
    std::vector<std::size_t> offset(n_workers, 0);
    for (std::size_t w = 1; w < n_workers; ++w) offset[w] = offset[w - 1] + slices[w - 1];
    try {
      const double loss = evaluate_workers(
          workers, params,
          [&](std::size_t w, GraphWorker& wk) {
            for (std::size_t j = 0; j < slices[w]; ++j) {
              wk.tape->bind(wk.inputs[2 * j], batch_q[offset[w] + j]);
              wk.tape->bind(wk.inputs[2 * j + 1], batch_eps[offset[w] + j]);
            }
          },
          cfg.threads, grads);
      if (!std::isfinite(loss)) throw NumericalError("non-finite loss", step);
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
      break;
    }
  }
  return result;
}

struct NhfConfig {
  int n_hamiltonians = 2;
  int leapfrog_steps = 2;
  int hidden = 32;
  int depth = 2;
  int encoder_hidden = 32;
  double dt_init = 0.125;
  bool learn_dt = true;
  PriorSpec prior = PriorSpec::standard_normal();
  FlowTrainConfig train;
};

struct NhfTrainResult {
  NhfModel model;
  FlowTrainResult stats;
};

inline NhfModel make_nhf(int d, const NhfConfig& cfg) {
  RngStream rng = RngStream(cfg.train.seed).fork(0x4e4846);
  NhfModel m{FlowStack::random(d, cfg.n_hamiltonians, cfg.hidden, rng, cfg.leapfrog_steps, cfg.dt_init, cfg.depth),
             GaussianEncoder::random(d, cfg.encoder_hidden, rng), cfg.prior};
  m.stack.learn_dt = cfg.learn_dt;
  m.prior.validate();
  return m;
}

inline NhfTrainResult train_nhf(std::span<const Vec> data, const NhfConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_nhf: empty dataset");
  NhfTrainResult r{make_nhf(static_cast<int>(data.front().size()), cfg), {}};
  r.stats = train_elbo(r.model, data, cfg.train);
  return r;
}

struct RnvpConfig {
  int n_layers = 2;
  int hidden = 32;
  Activation activation = Activation::tanh;
  double final_scale = 1.0;
  int encoder_hidden = 32;
  PriorSpec prior = PriorSpec::standard_normal();
  FlowTrainConfig train;
};

struct RnvpTrainResult {
  RnvpModel model;
  FlowTrainResult stats;
};

inline RnvpTrainResult train_rnvp(std::span<const Vec> data, const RnvpConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_rnvp: empty dataset");
  const int d = static_cast<int>(data.front().size());
  RngStream rng = RngStream(cfg.train.seed).fork(0x524e5650);
  RnvpTrainResult r{{RnvpFlow::random(d, cfg.n_layers, cfg.hidden, rng, cfg.activation, cfg.final_scale),
                     GaussianEncoder::random(d, cfg.encoder_hidden, rng), cfg.prior},
                    {}};
  r.stats = train_elbo(r.model, data, cfg.train);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic target densities

/// Equal-weight isotropic Gaussian mixture.
struct GaussianMixture {
  std::vector<Vec> means;
  double std = 0.3;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }

  /// "mixture2": modes at -2 and +2 in 1-d. "mixture4": corners of a square
  /// of side 4 in 2-d. "point": a single narrow mode at the origin in 1-d.
  static GaussianMixture named(const std::string& name, double std = 0.3) {
    if (name == "mixture2") return {{{-2.0}, {2.0}}, std};
    if (name == "mixture4") return {{{-2.0, -2.0}, {-2.0, 2.0}, {2.0, -2.0}, {2.0, 2.0}}, std};
    if (name == "point") return {{{0.0}}, std};
    throw std::invalid_argument("unknown density '" + name + "' (expected mixture2, mixture4 or point)");
  }

  double log_density(std::span<const double> x) const {
    double mx = -std::numeric_limits<double>::infinity();
    Vec terms;
    for (const Vec& m : means) {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = (x[i] - m[i]) / std;
        acc += -0.5 * z * z - std::log(std) - 0.5 * std::log(2.0 * std::numbers::pi);
      }
      terms.push_back(acc);
      mx = std::max(mx, acc);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    return mx + std::log(s / static_cast<double>(means.size()));
  }

  std::vector<Vec> sample(RngStream& rng, std::size_t n) const {
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = std::min(means.size() - 1, static_cast<std::size_t>(rng.uniform() * means.size()));
      Vec x = sample_gaussian(rng, means[k].size(), 0.0, std);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += means[k][j];
      out.push_back(std::move(x));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Checkpoints

inline Checkpoint to_checkpoint(const NhfModel& m) {
  Checkpoint ck{CheckpointKind::nhf,
                {static_cast<double>(m.stack.leapfrog_steps), m.stack.log_dt.data[0], m.stack.learn_dt ? 1.0 : 0.0,
                 static_cast<double>(m.prior.kind), m.prior.sigma, m.prior.beta,
                 static_cast<double>(m.stack.hamiltonians.size())},
                {}};
  for (const auto& h : m.stack.hamiltonians) {
    ck.nets.push_back(h.kinetic);
    ck.nets.push_back(h.potential);
  }
  ck.nets.push_back(m.encoder.mean_net);
  ck.nets.push_back(m.encoder.std_net);
  return ck;
}

namespace detail {
inline PriorSpec prior_from_scalars(double kind, double sigma, double beta) {
  if (kind == 1.0) return PriorSpec::standard_normal();
  if (kind == 0.0) return PriorSpec::soft_uniform(sigma, beta);
  throw IoError("checkpoint: unknown prior kind");
}
}  // namespace detail

inline NhfModel nhf_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::nhf || ck.scalars.size() != 7) throw IoError("checkpoint does not hold an NHF model");
  const auto n_h = static_cast<std::size_t>(ck.scalars[6]);
  if (ck.nets.size() != 2 * n_h + 2) throw IoError("checkpoint: NHF net count mismatch");
  NhfModel m;
  m.stack.leapfrog_steps = static_cast<int>(ck.scalars[0]);
  m.stack.log_dt.data[0] = ck.scalars[1];
  m.stack.learn_dt = ck.scalars[2] != 0.0;
  m.prior = detail::prior_from_scalars(ck.scalars[3], ck.scalars[4], ck.scalars[5]);
  for (std::size_t i = 0; i < n_h; ++i) m.stack.hamiltonians.push_back({ck.nets[2 * i], ck.nets[2 * i + 1]});
  m.encoder = {ck.nets[2 * n_h], ck.nets[2 * n_h + 1]};
  m.stack.validate();
  return m;
}

inline Checkpoint to_checkpoint(const RnvpModel& m) {
  Checkpoint ck{CheckpointKind::rnvp,
                {static_cast<double>(m.prior.kind), m.prior.sigma, m.prior.beta,
                 static_cast<double>(m.flow.layers.size())},
                {}};
  for (const auto& l : m.flow.layers) {
    ck.scalars.push_back(l.condition_on_q ? 1.0 : 0.0);
    ck.nets.push_back(l.scale_net);
    ck.nets.push_back(l.shift_net);
  }
  ck.nets.push_back(m.encoder.mean_net);
  ck.nets.push_back(m.encoder.std_net);
  return ck;
}

inline RnvpModel rnvp_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::rnvp || ck.scalars.size() < 4) throw IoError("checkpoint does not hold an RNVP model");
  const auto n_l = static_cast<std::size_t>(ck.scalars[3]);
  if (ck.scalars.size() != 4 + n_l || ck.nets.size() != 2 * n_l + 2) throw IoError("checkpoint: RNVP layout mismatch");
  RnvpModel m;
  m.prior = detail::prior_from_scalars(ck.scalars[0], ck.scalars[1], ck.scalars[2]);
  for (std::size_t i = 0; i < n_l; ++i)
    m.flow.layers.push_back({ck.scalars[4 + i] != 0.0, ck.nets[2 * i], ck.nets[2 * i + 1]});
  m.encoder = {ck.nets[2 * n_l], ck.nets[2 * n_l + 1]};
  return m;
}

}  // namespace hamflow
