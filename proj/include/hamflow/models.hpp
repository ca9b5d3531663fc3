#pragma once

// Parameterized networks: dense MLPs, the separable learned Hamiltonian
// H = K(p) + V(q), the Gaussian momentum encoder, the affine-coupling (RNVP)
// baseline flow, the Adam optimizer and the binary checkpoint format.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "hamflow/core.hpp"
#include "hamflow/diffgraph.hpp"

namespace hamflow {

/// Row-major dense block of parameters.
struct Tensor {
  int rows = 0;
  int cols = 0;
  Vec data;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}
  std::size_t size() const noexcept { return data.size(); }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using ParamList = std::vector<Tensor*>;

inline std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const Tensor* t : params) n += t->size();
  return n;
}

// ---------------------------------------------------------------------------
// MLP

enum class Activation : std::uint8_t { identity = 0, softplus = 1, relu = 2, tanh = 3, square = 4 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::softplus: return "softplus";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::square: return "square";
  }
  return "?";
}

namespace detail {

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::softplus: return ad::detail::softplus(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::square: return x * x;
  }
  return x;
}

inline double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::softplus: return ad::detail::sigmoid(x);
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::square: return 2.0 * x;
  }
  return 1.0;
}

inline ad::Var activate(Activation a, ad::Var x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::softplus: return x.tape->softplus(x);
    case Activation::relu: return x.tape->relu(x);
    case Activation::tanh: return x.tape->tanh(x);
    case Activation::square: return x.tape->square(x);
  }
  return x;
}

}  // namespace detail

/// Dense feed-forward network. Layer l maps sizes[l] -> sizes[l+1] through
/// weights[l] (sizes[l+1] x sizes[l]) and biases[l], then activations[l].
struct Mlp {
  std::vector<int> sizes;
  std::vector<Activation> activations;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  /// All-zero network; hidden layers use `hidden`, the last layer `output`.
  static Mlp zeros(std::vector<int> sizes, Activation hidden, Activation output = Activation::identity) {
    if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (int s : sizes)
      if (s < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
    Mlp net;
    net.sizes = std::move(sizes);
    const std::size_t layers = net.sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
      net.weights.emplace_back(net.sizes[l + 1], net.sizes[l]);
      net.biases.emplace_back(net.sizes[l + 1], 1);
      net.activations.push_back(l + 1 == layers ? output : hidden);
    }
    return net;
  }

  /// Gaussian weights with std 1/sqrt(fan_in), zero biases.
  static Mlp random(std::vector<int> sizes, Activation hidden, RngStream& rng,
                    Activation output = Activation::identity) {
    Mlp net = zeros(std::move(sizes), hidden, output);
    for (auto& w : net.weights) {
      const Vec draws = sample_gaussian(rng, w.size(), 0.0, 1.0 / std::sqrt(static_cast<double>(w.cols)));
      w.data = draws;
    }
    return net;
  }

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  std::size_t n_layers() const { return weights.size(); }

  void validate() const {
    if (sizes.size() < 2 || weights.size() != sizes.size() - 1 || biases.size() != weights.size() ||
        activations.size() != weights.size())
      throw ShapeError("Mlp: inconsistent layer lists");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows != sizes[l + 1] || weights[l].cols != sizes[l] || biases[l].rows != sizes[l + 1] ||
          biases[l].cols != 1)
        throw ShapeError("Mlp: layer " + std::to_string(l) + " shapes do not compose");
      if (!all_finite(weights[l].data) || !all_finite(biases[l].data))
        throw NumericalError("Mlp: non-finite parameter in layer " + std::to_string(l));
    }
  }

  /// Parameters in checkpoint order: layer-major, weights then bias.
  ParamList params() {
    ParamList out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    return out;
  }

  Vec forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != input_dim()) throw ShapeError("Mlp::forward: input size mismatch");
    Vec h(x.begin(), x.end()), z;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const Tensor& w = weights[l];
      z.assign(static_cast<std::size_t>(w.rows), 0.0);
      for (int r = 0; r < w.rows; ++r) {
        double acc = biases[l].data[r];
        for (int c = 0; c < w.cols; ++c) acc += w(r, c) * h[c];
        z[r] = detail::activate(activations[l], acc);
      }
      h.swap(z);
    }
    return h;
  }

  /// Scalar output and its gradient with respect to the input (hand-unrolled
  /// reverse pass; agrees with the diffgraph result).
  double value_and_input_grad(std::span<const double> x, Vec& grad) const {
    if (output_dim() != 1) throw ShapeError("Mlp::value_and_input_grad: output must be scalar");
    if (static_cast<int>(x.size()) != input_dim()) throw ShapeError("Mlp: input size mismatch");
    const std::size_t L = weights.size();
    std::vector<Vec> pre(L);
    Vec h(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
      const Tensor& w = weights[l];
      pre[l].assign(static_cast<std::size_t>(w.rows), 0.0);
      Vec next(static_cast<std::size_t>(w.rows));
      for (int r = 0; r < w.rows; ++r) {
        double acc = biases[l].data[r];
        for (int c = 0; c < w.cols; ++c) acc += w(r, c) * h[c];
        pre[l][r] = acc;
        next[r] = detail::activate(activations[l], acc);
      }
      h.swap(next);
    }
    Vec g(1, 1.0);
    for (std::size_t l = L; l-- > 0;) {
      const Tensor& w = weights[l];
      Vec gin(static_cast<std::size_t>(w.cols), 0.0);
      for (int r = 0; r < w.rows; ++r) {
        const double gz = g[r] * detail::activate_grad(activations[l], pre[l][r]);
        if (gz == 0.0) continue;
        for (int c = 0; c < w.cols; ++c) gin[c] += w(r, c) * gz;
      }
      g.swap(gin);
    }
    grad = std::move(g);
    return h[0];
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Parameter leaves of an Mlp on a tape.
struct MlpVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  std::vector<Activation> activations;

  void append_to(std::vector<ad::Var>& flat) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      flat.push_back(weights[l]);
      flat.push_back(biases[l]);
    }
  }
};

inline MlpVars bind_mlp(ad::Tape& tape, const Mlp& net) {
  MlpVars v;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    v.weights.push_back(tape.input(net.weights[l].data, net.weights[l].rows, net.weights[l].cols));
    v.biases.push_back(tape.input(net.biases[l].data, net.biases[l].rows, 1));
  }
  v.activations = net.activations;
  return v;
}

/// Appends the network's nodes for input x; returns the output node.
inline ad::Var mlp_forward(const MlpVars& net, ad::Var x) {
  ad::Tape& t = *x.tape;
  ad::Var h = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l)
    h = detail::activate(net.activations[l], t.add(t.matvec(net.weights[l], h), net.biases[l]));
  return h;
}

/// Binds every tensor as an input leaf, in order.
inline std::vector<ad::Var> bind_params(ad::Tape& tape, const ParamList& params) {
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const Tensor* t : params) vars.push_back(tape.input(t->data, t->rows, t->cols));
  return vars;
}

inline void rebind_params(ad::Tape& tape, std::span<const ad::Var> vars, const ParamList& params) {
  if (vars.size() != params.size()) throw ShapeError("rebind_params: count mismatch");
  for (std::size_t i = 0; i < vars.size(); ++i) tape.bind(vars[i], params[i]->data);
}

/// Rebuilds MlpVars views over a flat list of bound parameter leaves.
inline MlpVars mlp_vars_from(std::span<const ad::Var> flat, std::size_t& cursor, const Mlp& net) {
  MlpVars v;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    v.weights.push_back(flat[cursor++]);
    v.biases.push_back(flat[cursor++]);
  }
  v.activations = net.activations;
  return v;
}

// ---------------------------------------------------------------------------
// Separable learned Hamiltonian

/// H(q, p) = K(p) + V(q) with scalar-output MLPs K and V.
struct SeparableHamiltonianModel {
  Mlp kinetic;
  Mlp potential;

  static SeparableHamiltonianModel random(int d, int hidden, RngStream& rng, int depth = 2,
                                          Activation act = Activation::softplus) {
    std::vector<int> sizes{d};
    for (int i = 0; i < depth; ++i) sizes.push_back(hidden);
    sizes.push_back(1);
    RngStream kr = rng.fork(rng.next_u64()), vr = rng.fork(rng.next_u64());
    return {Mlp::random(sizes, act, kr), Mlp::random(sizes, act, vr)};
  }
  static SeparableHamiltonianModel zeros(int d, int hidden, int depth = 2, Activation act = Activation::softplus) {
    std::vector<int> sizes{d};
    for (int i = 0; i < depth; ++i) sizes.push_back(hidden);
    sizes.push_back(1);
    return {Mlp::zeros(sizes, act), Mlp::zeros(sizes, act)};
  }
  /// K(p) = a p^2, V(q) = b q^2 elementwise, i.e. a harmonic oscillator with
  /// 1/2m = a and k/2 = b. Exact, through a square activation.
  static SeparableHamiltonianModel quadratic(int d, double kinetic_coeff, double potential_coeff) {
    const auto make = [d](double c) {
      Mlp net = Mlp::zeros({d, d, 1}, Activation::square);
      for (int i = 0; i < d; ++i) {
        net.weights[0](i, i) = 1.0;
        net.weights[1](0, i) = c;
      }
      return net;
    };
    return {make(kinetic_coeff), make(potential_coeff)};
  }

  ParamList params() {
    ParamList out = kinetic.params();
    const ParamList v = potential.params();
    out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  // EnergyFunction interface
  double energy(const PhaseState& s) const {
    check(s);
    return kinetic.forward(s.p)[0] + potential.forward(s.q)[0];
  }
  Vec grad_q(const PhaseState& s) const {
    check(s);
    Vec g;
    potential.value_and_input_grad(s.q, g);
    return g;
  }
  Vec grad_p(const PhaseState& s) const {
    check(s);
    Vec g;
    kinetic.value_and_input_grad(s.p, g);
    return g;
  }
  bool is_separable() const noexcept { return true; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(potential.input_dim()); }

  friend bool operator==(const SeparableHamiltonianModel&, const SeparableHamiltonianModel&) = default;

 private:
  void check(const PhaseState& s) const {
    if (static_cast<int>(s.q.size()) != potential.input_dim() || static_cast<int>(s.p.size()) != kinetic.input_dim())
      throw ShapeError("SeparableHamiltonianModel: state dimension mismatch");
  }
};

static_assert(EnergyFunction<SeparableHamiltonianModel>);

struct HamiltonianVars {
  MlpVars kinetic;
  MlpVars potential;
};

inline HamiltonianVars hamiltonian_vars_from(std::span<const ad::Var> flat, std::size_t& cursor,
                                             const SeparableHamiltonianModel& m) {
  HamiltonianVars v;
  v.kinetic = mlp_vars_from(flat, cursor, m.kinetic);
  v.potential = mlp_vars_from(flat, cursor, m.potential);
  return v;
}

/// K(p) + V(q) as a graph node.
inline ad::Var model_energy(const HamiltonianVars& m, ad::Var q, ad::Var p) {
  return q.tape->add(mlp_forward(m.kinetic, p), mlp_forward(m.potential, q));
}

/// dV/dq as graph nodes (differentiable again).
inline ad::Var potential_grad(const HamiltonianVars& m, ad::Var q) {
  const ad::Var v = mlp_forward(m.potential, q);
  const ad::Var wrt[] = {q};
  return q.tape->grad_as_graph(v, wrt)[0];
}

/// dK/dp as graph nodes.
inline ad::Var kinetic_grad(const HamiltonianVars& m, ad::Var p) {
  const ad::Var k = mlp_forward(m.kinetic, p);
  const ad::Var wrt[] = {p};
  return p.tape->grad_as_graph(k, wrt)[0];
}

struct GraphState {
  ad::Var q;
  ad::Var p;
};

/// States 0..steps of a kick-drift-kick rollout with step dt (a scalar node).
/// The potential gradient at the end of one step is reused as the start of
/// the next.
inline std::vector<GraphState> leapfrog_graph_rollout(const HamiltonianVars& m, GraphState s, ad::Var dt, int steps) {
  ad::Tape& t = *s.q.tape;
  std::vector<GraphState> out{s};
  if (steps <= 0) return out;
  const ad::Var half = t.scale(0.5, dt);
  ad::Var dv = potential_grad(m, s.q);
  for (int k = 0; k < steps; ++k) {
    s.p = t.sub(s.p, t.scale(half, dv));
    s.q = t.add(s.q, t.scale(dt, kinetic_grad(m, s.p)));
    dv = potential_grad(m, s.q);
    s.p = t.sub(s.p, t.scale(half, dv));
    out.push_back(s);
  }
  return out;
}

/// Final state after `steps` leapfrog steps on the graph.
inline GraphState leapfrog_graph(const HamiltonianVars& m, GraphState s, ad::Var dt, int steps) {
  return leapfrog_graph_rollout(m, s, dt, steps).back();
}

// ---------------------------------------------------------------------------
// Gaussian encoder f(p | q) = N(p; mu(q), diag(sigma(q)^2))

inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

struct GaussianEncoder {
  Mlp mean_net;
  Mlp std_net;  // sigma = softplus(std_net(q))

  static GaussianEncoder random(int d, int hidden, RngStream& rng, Activation act = Activation::relu) {
    RngStream mr = rng.fork(rng.next_u64()), sr = rng.fork(rng.next_u64());
    GaussianEncoder enc{Mlp::random({d, hidden, hidden, d}, act, mr), Mlp::random({d, hidden, hidden, d}, act, sr)};
    // start near N(0, 1)
    for (double& w : enc.mean_net.weights.back().data) w *= 0.1;
    for (double& w : enc.std_net.weights.back().data) w *= 0.1;
    std::fill(enc.std_net.biases.back().data.begin(), enc.std_net.biases.back().data.end(), inverse_softplus(1.0));
    return enc;
  }

  /// Ignores q: N(mean, std^2) in every coordinate.
  static GaussianEncoder constant(int d, double mean, double std, int hidden = 4,
                                  Activation act = Activation::relu) {
    GaussianEncoder enc{Mlp::zeros({d, hidden, hidden, d}, act), Mlp::zeros({d, hidden, hidden, d}, act)};
    std::fill(enc.mean_net.biases.back().data.begin(), enc.mean_net.biases.back().data.end(), mean);
    std::fill(enc.std_net.biases.back().data.begin(), enc.std_net.biases.back().data.end(), inverse_softplus(std));
    return enc;
  }

  int dim() const { return mean_net.input_dim(); }

  ParamList params() {
    ParamList out = mean_net.params();
    const ParamList s = std_net.params();
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  Vec mean(std::span<const double> q) const { return mean_net.forward(q); }
  Vec stddev(std::span<const double> q) const {
    Vec raw = std_net.forward(q);
    for (double& r : raw) r = ad::detail::softplus(r);
    return raw;
  }

  double log_density(std::span<const double> p, std::span<const double> q) const {
    const Vec mu = mean(q), sd = stddev(q);
    if (p.size() != mu.size()) throw ShapeError("GaussianEncoder::log_density: dimension mismatch");
    double lp = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double z = (p[i] - mu[i]) / sd[i];
      lp += -0.5 * z * z - std::log(sd[i]) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
  }

  Vec sample(std::span<const double> q, RngStream& rng) const {
    const Vec mu = mean(q), sd = stddev(q);
    const Vec eps = sample_gaussian(rng, mu.size(), 0.0, 1.0);
    Vec p(mu.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = mu[i] + sd[i] * eps[i];
    return p;
  }

  friend bool operator==(const GaussianEncoder&, const GaussianEncoder&) = default;
};

struct EncoderVars {
  MlpVars mean;
  MlpVars std;
};

inline EncoderVars encoder_vars_from(std::span<const ad::Var> flat, std::size_t& cursor, const GaussianEncoder& e) {
  EncoderVars v;
  v.mean = mlp_vars_from(flat, cursor, e.mean_net);
  v.std = mlp_vars_from(flat, cursor, e.std_net);
  return v;
}

struct EncoderSample {
  ad::Var p;         // reparameterized sample mu + sigma * eps
  ad::Var log_prob;  // log f(p | q)
};

/// Reparameterized draw given standard-normal noise `eps` (an input node).
inline EncoderSample encoder_sample_graph(const EncoderVars& enc, ad::Var q, ad::Var eps) {
  ad::Tape& t = *q.tape;
  const ad::Var mu = mlp_forward(enc.mean, q);
  const ad::Var sigma = t.softplus(mlp_forward(enc.std, q));
  const ad::Var p = t.add(mu, t.mul(sigma, eps));
  const double d = static_cast<double>(t.numel(q));
  // log N(p; mu, sigma) = -eps^2/2 - log sigma - log(2 pi)/2, summed
  const ad::Var quad = t.scale(-0.5, t.dot(eps, eps));
  const ad::Var logdet = t.sum(t.log(sigma));
  const ad::Var lp = t.add(t.sub(quad, logdet), t.scalar(-0.5 * d * std::log(2.0 * std::numbers::pi)));
  return {p, lp};
}

// ---------------------------------------------------------------------------
// RNVP: affine couplings alternating between conditioning on q and on p.
// Forward maps data (q, p) to the latent; log p(x) = log pi(f(x)) + logdet.

struct CouplingLayer {
  bool condition_on_q = true;  // true: p <- p * exp(s(q)) + t(q)
  Mlp scale_net;
  Mlp shift_net;
  friend bool operator==(const CouplingLayer&, const CouplingLayer&) = default;
};

struct RnvpFlow {
  std::vector<CouplingLayer> layers;

  /// Final layers are scaled by `final_scale`; 0 gives an exact identity at
  /// initialization.
  static RnvpFlow random(int d, int n_layers, int hidden, RngStream& rng, Activation act = Activation::relu,
                         double final_scale = 0.1) {
    RnvpFlow f;
    for (int l = 0; l < n_layers; ++l) {
      RngStream sr = rng.fork(rng.next_u64()), tr = rng.fork(rng.next_u64());
      CouplingLayer c{l % 2 == 0, Mlp::random({d, hidden, hidden, d}, act, sr),
                      Mlp::random({d, hidden, hidden, d}, act, tr)};
      for (double& w : c.scale_net.weights.back().data) w *= final_scale;
      for (double& w : c.shift_net.weights.back().data) w *= final_scale;
      f.layers.push_back(std::move(c));
    }
    return f;
  }

  int dim() const { return layers.empty() ? 0 : layers.front().scale_net.input_dim(); }

  ParamList params() {
    ParamList out;
    for (auto& l : layers) {
      for (Tensor* t : l.scale_net.params()) out.push_back(t);
      for (Tensor* t : l.shift_net.params()) out.push_back(t);
    }
    return out;
  }

  friend bool operator==(const RnvpFlow&, const RnvpFlow&) = default;
};

struct RnvpResult {
  PhaseState y;
  double logdet = 0.0;
};

inline RnvpResult rnvp_forward(const RnvpFlow& flow, const PhaseState& x) {
  RnvpResult r{x, 0.0};
  for (const auto& layer : flow.layers) {
    Vec& cond = layer.condition_on_q ? r.y.q : r.y.p;
    Vec& moved = layer.condition_on_q ? r.y.p : r.y.q;
    const Vec s = layer.scale_net.forward(cond);
    const Vec t = layer.shift_net.forward(cond);
    for (std::size_t i = 0; i < moved.size(); ++i) {
      moved[i] = moved[i] * std::exp(s[i]) + t[i];
      r.logdet += s[i];
    }
  }
  return r;
}

/// Inverse of rnvp_forward; `logdet` is log|det d(x)/d(y)|.
inline RnvpResult rnvp_inverse(const RnvpFlow& flow, const PhaseState& y) {
  RnvpResult r{y, 0.0};
  for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
    Vec& cond = it->condition_on_q ? r.y.q : r.y.p;
    Vec& moved = it->condition_on_q ? r.y.p : r.y.q;
    const Vec s = it->scale_net.forward(cond);
    const Vec t = it->shift_net.forward(cond);
    for (std::size_t i = 0; i < moved.size(); ++i) {
      moved[i] = (moved[i] - t[i]) * std::exp(-s[i]);
      r.logdet -= s[i];
    }
  }
  return r;
}

struct RnvpLayerVars {
  bool condition_on_q;
  MlpVars scale;
  MlpVars shift;
};

inline std::vector<RnvpLayerVars> rnvp_vars_from(std::span<const ad::Var> flat, std::size_t& cursor,
                                                 const RnvpFlow& flow) {
  std::vector<RnvpLayerVars> out;
  for (const auto& l : flow.layers) {
    RnvpLayerVars v{l.condition_on_q, {}, {}};
    v.scale = mlp_vars_from(flat, cursor, l.scale_net);
    v.shift = mlp_vars_from(flat, cursor, l.shift_net);
    out.push_back(std::move(v));
  }
  return out;
}

struct RnvpGraphResult {
  GraphState y;
  ad::Var logdet;
};

inline RnvpGraphResult rnvp_forward_graph(std::span<const RnvpLayerVars> layers, GraphState x) {
  ad::Tape& t = *x.q.tape;
  ad::Var logdet = t.scalar(0.0);
  for (const auto& l : layers) {
    ad::Var& cond = l.condition_on_q ? x.q : x.p;
    ad::Var& moved = l.condition_on_q ? x.p : x.q;
    const ad::Var s = mlp_forward(l.scale, cond);
    const ad::Var sh = mlp_forward(l.shift, cond);
    moved = t.add(t.mul(moved, t.exp(s)), sh);
    logdet = t.add(logdet, t.sum(s));
  }
  return {x, logdet};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Vec> m;
  std::vector<Vec> v;
  long step = 0;
};

/// One bias-corrected Adam update. A non-finite gradient aborts before any
/// parameter is touched.
inline void adam_step(AdamState& st, const ParamList& params, const std::vector<Vec>& grads) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->size()) throw ShapeError("adam_step: gradient shape mismatch");
    if (!all_finite(grads[i]))
      throw NumericalError("adam_step: non-finite gradient in tensor " + std::to_string(i), st.step);
  }
  if (st.m.empty()) {
    for (const Tensor* t : params) {
      st.m.emplace_back(t->size(), 0.0);
      st.v.emplace_back(t->size(), 0.0);
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Vec& w = params[i]->data;
    Vec& m = st.m[i];
    Vec& v = st.v[i];
    const Vec& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
      v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
      w[k] -= st.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers little-endian uint32, reals little-endian IEEE-754 f64):
//   magic "HAMFLOW\0" | version | kind | n_scalars | scalars...
//   | n_nets | per net: n_layers, sizes[n_layers + 1], activation tags as u32,
//     then per layer weights (row-major) followed by bias.

enum class CheckpointKind : std::uint32_t { hamiltonian = 1, nhf = 2, rnvp = 3 };

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  CheckpointKind kind = CheckpointKind::hamiltonian;
  Vec scalars;
  std::vector<Mlp> nets;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_f64(std::ostream& os, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint: truncated file");
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= std::uint32_t{b[i]} << (8 * i);
  return x;
}
inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated file");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= std::uint64_t{b[i]} << (8 * i);
  return std::bit_cast<double>(x);
}

inline constexpr char kCheckpointMagic[8] = {'H', 'A', 'M', 'F', 'L', 'O', 'W', '\0'};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(detail::kCheckpointMagic, 8);
  detail::put_u32(os, Checkpoint::kVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.kind));
  detail::put_u32(os, static_cast<std::uint32_t>(ck.scalars.size()));
  for (double s : ck.scalars) detail::put_f64(os, s);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.nets.size()));
  for (const Mlp& net : ck.nets) {
    net.validate();
    detail::put_u32(os, static_cast<std::uint32_t>(net.n_layers()));
    for (int s : net.sizes) detail::put_u32(os, static_cast<std::uint32_t>(s));
    for (Activation a : net.activations) detail::put_u32(os, static_cast<std::uint32_t>(a));
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
      for (double w : net.weights[l].data) detail::put_f64(os, w);
      for (double b : net.biases[l].data) detail::put_f64(os, b);
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw IoError("not a hamflow checkpoint: " + path);
  const std::uint32_t version = detail::get_u32(is);
  if (version != Checkpoint::kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t kind = detail::get_u32(is);
  if (kind < 1 || kind > 3) throw IoError("unknown checkpoint kind " + std::to_string(kind));
  ck.kind = static_cast<CheckpointKind>(kind);
  const std::uint32_t n_scalars = detail::get_u32(is);
  if (n_scalars > 4096) throw IoError("checkpoint: implausible scalar count");
  for (std::uint32_t i = 0; i < n_scalars; ++i) ck.scalars.push_back(detail::get_f64(is));
  const std::uint32_t n_nets = detail::get_u32(is);
  if (n_nets > 4096) throw IoError("checkpoint: implausible net count");
  for (std::uint32_t k = 0; k < n_nets; ++k) {
    const std::uint32_t layers = detail::get_u32(is);
    if (layers < 1 || layers > 64) throw IoError("checkpoint: implausible layer count");
    std::vector<int> sizes;
    for (std::uint32_t i = 0; i <= layers; ++i) {
      const std::uint32_t s = detail::get_u32(is);
      if (s < 1 || s > (1u << 16)) throw IoError("checkpoint: implausible layer size");
      sizes.push_back(static_cast<int>(s));
    }
    std::vector<Activation> acts;
    for (std::uint32_t i = 0; i < layers; ++i) {
      const std::uint32_t a = detail::get_u32(is);
      if (a > 4) throw IoError("checkpoint: unknown activation tag");
      acts.push_back(static_cast<Activation>(a));
    }
    Mlp net = Mlp::zeros(sizes, Activation::identity);
    net.activations = acts;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
      for (double& w : net.weights[l].data) w = detail::get_f64(is);
      for (double& b : net.biases[l].data) b = detail::get_f64(is);
    }
    ck.nets.push_back(std::move(net));
  }
  return ck;
}

inline Checkpoint to_checkpoint(const SeparableHamiltonianModel& m) {
  return {CheckpointKind::hamiltonian, {}, {m.kinetic, m.potential}};
}

inline SeparableHamiltonianModel hamiltonian_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::hamiltonian || ck.nets.size() != 2)
    throw IoError("checkpoint does not hold a separable Hamiltonian");
  SeparableHamiltonianModel m{ck.nets[0], ck.nets[1]};
  if (m.kinetic.output_dim() != 1 || m.potential.output_dim() != 1 ||
      m.kinetic.input_dim() != m.potential.input_dim())
    throw IoError("checkpoint: Hamiltonian nets have incompatible shapes");
  return m;
}

}  // namespace hamflow
