#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "hamflow/diffgraph.hpp"
#include "hamflow/integrators.hpp"
#include "hamflow/models.hpp"

using namespace hamflow;
using ad::Tape;
using ad::Var;

namespace {

using Builder = std::function<Var(Tape&, Var)>;

double eval_at(const Builder& f, const Vec& x) {
  Tape t;
  const Var in = t.input(x);
  return t.scalar_value(f(t, in));
}

Vec grad_at(const Builder& f, const Vec& x) {
  Tape t;
  const Var in = t.input(x);
  const Var out = f(t, in);
  t.backward(out);
  const auto a = t.adjoint(in);
  return {a.begin(), a.end()};
}

// d/dx of the graph-emitted gradient's dot with a fixed direction.
Vec second_order_at(const Builder& f, const Vec& x, const Vec& dir) {
  Tape t;
  const Var in = t.input(x);
  const Var out = f(t, in);
  const Var wrt[] = {in};
  const Var g = t.grad_as_graph(out, wrt)[0];
  const Var proj = t.dot(g, t.constant(dir));
  t.backward(proj);
  const auto a = t.adjoint(in);
  return {a.begin(), a.end()};
}

Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

double rel_err(const Vec& a, const Vec& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::max(std::abs(a[i]), std::abs(b[i])));
  }
  return num / std::max(den, 1e-12);
}

}  // namespace

TEST(Forward, Examples) {
  Tape t;
  const Var x = t.input(Vec{3.0});
  EXPECT_EQ(t.scalar_value(t.square(x)), 9.0);
  EXPECT_EQ(t.scalar_value(t.mul(x, x)), 9.0);
  const Var z = t.input(Vec{0.0});
  EXPECT_NEAR(t.scalar_value(t.softplus(z)), std::numbers::ln2, 1e-15);
}

TEST(Forward, TwoLayerMlpByHand) {
  // W1 = [[1, 2], [-1, 0.5]], b1 = [0.1, -0.2], softplus, W2 = [[0.3, -0.7]], b2 = 0.05.
  Mlp net = Mlp::zeros({2, 2, 1}, Activation::softplus);
  net.weights[0].data = {1.0, 2.0, -1.0, 0.5};
  net.biases[0].data = {0.1, -0.2};
  net.weights[1].data = {0.3, -0.7};
  net.biases[1].data = {0.05};
  const double x0 = 0.4, x1 = -0.6;
  const double h0 = std::log1p(std::exp(1.0 * x0 + 2.0 * x1 + 0.1));
  const double h1 = std::log1p(std::exp(-1.0 * x0 + 0.5 * x1 - 0.2));
  const double expected = 0.3 * h0 - 0.7 * h1 + 0.05;

  Tape t;
  const MlpVars v = bind_mlp(t, net);
  const Var out = mlp_forward(v, t.input(Vec{x0, x1}));
  EXPECT_NEAR(t.scalar_value(out), expected, 1e-15);
  EXPECT_NEAR(net.forward(Vec{x0, x1})[0], expected, 1e-15);
}

TEST(Forward, ErrorsOnUnboundInputAndNonFinite) {
  Tape t;
  const Var x = t.input(1);
  const Var y = t.square(x);
  (void)y;
  EXPECT_THROW(t.forward(), std::invalid_argument);

  Tape u;
  const Var a = u.input(Vec{-1.0});
  try {
    u.log(a);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("node 1"), std::string::npos) << e.what();
  }
}

TEST(Forward, TapeReuseMatchesFreshGraph) {
  RngStream rng(2);
  Mlp net = Mlp::random({3, 8, 1}, Activation::softplus, rng);
  Tape t;
  const MlpVars v = bind_mlp(t, net);
  const Var x = t.input(3);
  t.bind(x, Vec{0.1, 0.2, 0.3});
  t.forward();
  const Var out = mlp_forward(v, x);
  for (int i = 0; i < 5; ++i) {
    const Vec in = sample_gaussian(rng, 3, 0.0, 1.0);
    t.bind(x, in);
    t.forward();
    EXPECT_NEAR(t.scalar_value(out), net.forward(in)[0], 1e-14);
  }
}

TEST(Backward, Examples) {
  EXPECT_EQ(grad_at([](Tape& t, Var x) { return t.square(x); }, {3.0})[0], 6.0);
  EXPECT_NEAR(grad_at([](Tape& t, Var x) { return t.softplus(x); }, {0.0})[0], 0.5, 1e-15);
}

TEST(Backward, BeforeForwardIsAnError) {
  Tape t;
  const Var x = t.input(Vec{1.0});
  const Var y = t.square(x);
  t.bind(x, Vec{2.0});
  EXPECT_THROW(t.backward(y), std::logic_error);
  t.forward();
  EXPECT_NO_THROW(t.backward(y));
  EXPECT_EQ(t.adjoint(x)[0], 4.0);
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  EXPECT_EQ(grad_at([](Tape& t, Var x) { return t.sum(t.relu(x)); }, {0.0, 1.0, -1.0}), (Vec{0.0, 1.0, 0.0}));
}

TEST(Backward, EveryOpMatchesFiniteDifferences) {
  const Vec x{0.3, -0.8, 1.1};
  const Vec A{0.5, -1.0, 2.0, 0.25, 0.7, -0.3};  // 2x3
  std::vector<std::pair<const char*, Builder>> cases = {
      {"add", [](Tape& t, Var v) { return t.sum(t.add(v, t.square(v))); }},
      {"sub", [](Tape& t, Var v) { return t.sum(t.sub(t.tanh(v), v)); }},
      {"mul", [](Tape& t, Var v) { return t.sum(t.mul(v, t.sigmoid(v))); }},
      {"neg", [](Tape& t, Var v) { return t.dot(t.neg(v), t.exp(v)); }},
      {"scale", [](Tape& t, Var v) { return t.sum(t.scale(t.sum(v), t.square(v))); }},
      {"softplus", [](Tape& t, Var v) { return t.sum(t.softplus(t.scale(2.0, v))); }},
      {"log", [](Tape& t, Var v) { return t.sum(t.log(t.add(t.square(v), t.filled(1.0, 3)))); }},
      {"reciprocal", [](Tape& t, Var v) { return t.sum(t.reciprocal(t.add(t.exp(v), t.filled(0.5, 3)))); }},
      {"matvec", [&](Tape& t, Var v) { return t.sum(t.tanh(t.matvec(t.constant(A, 2, 3), v))); }},
      {"matvec_t",
       [&](Tape& t, Var v) {
         const Var y = t.tanh(t.matvec(t.constant(A, 2, 3), v));
         return t.dot(t.matvec_t(t.constant(A, 2, 3), y), v);
       }},
  };
  for (const auto& [name, f] : cases) {
    const Vec fd = central_difference([&](const Vec& y) { return eval_at(f, y); }, x);
    EXPECT_LT(rel_err(grad_at(f, x), fd), 1e-8) << name;
  }
}

TEST(Backward, MlpParameterGradientMatchesFiniteDifferences) {
  RngStream rng(17);
  Mlp net = Mlp::random({2, 16, 16, 1}, Activation::softplus, rng);
  const Vec x{0.4, -1.2};
  const ParamList params = net.params();
  Tape t;
  const std::vector<Var> vars = bind_params(t, params);
  std::size_t cursor = 0;
  const MlpVars mv = mlp_vars_from(vars, cursor, net);
  const Var out = t.square(mlp_forward(mv, t.constant(x)));
  const std::vector<Vec> g = t.gradients(out, vars);

  const auto loss = [&](Mlp& m) {
    const double y = m.forward(x)[0];
    return y * y;
  };
  for (int dir = 0; dir < 20; ++dir) {
    std::vector<Vec> d;
    double analytic = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      d.push_back(sample_gaussian(rng, params[i]->size(), 0.0, 1.0));
      for (std::size_t k = 0; k < d[i].size(); ++k) analytic += g[i][k] * d[i][k];
    }
    const double h = 1e-5;
    Mlp plus = net, minus = net;
    const ParamList pp = plus.params(), pm = minus.params();
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t k = 0; k < d[i].size(); ++k) {
        pp[i]->data[k] += h * d[i][k];
        pm[i]->data[k] -= h * d[i][k];
      }
    const double fd = (loss(plus) - loss(minus)) / (2 * h);
    EXPECT_LT(std::abs(fd - analytic), 1e-6 * std::max(1.0, std::abs(analytic))) << "direction " << dir;
  }
}

TEST(Backward, Linearity) {
  const Builder f = [](Tape& t, Var v) { return t.sum(t.softplus(t.mul(v, v))); };
  const Builder g = [](Tape& t, Var v) { return t.dot(t.tanh(v), t.exp(v)); };
  const double a = 1.7, b = -0.4;
  const Vec x{0.2, -0.5, 0.9};
  const Vec gf = grad_at(f, x), gg = grad_at(g, x);
  const Vec gc = grad_at([&](Tape& t, Var v) { return t.add(t.scale(a, f(t, v)), t.scale(b, g(t, v))); }, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-15);
}

TEST(GradAsGraph, SecondDerivativeExamples) {
  EXPECT_EQ(second_order_at([](Tape& t, Var x) { return t.square(x); }, {3.0}, {1.0})[0], 2.0);
  EXPECT_NEAR(second_order_at([](Tape& t, Var x) { return t.softplus(x); }, {0.0}, {1.0})[0], 0.25, 1e-15);
}

TEST(GradAsGraph, HessianOfQuadraticForm) {
  const Vec A{2.0, 0.5, -1.0, 0.3, 1.5, 0.7, 0.0, -0.4, 3.0};
  const Builder f = [&](Tape& t, Var x) { return t.scale(0.5, t.dot(x, t.matvec(t.constant(A, 3, 3), x))); };
  const Vec x{0.3, -0.2, 0.8};
  for (int j = 0; j < 3; ++j) {
    Vec e(3, 0.0);
    e[j] = 1.0;
    const Vec row = second_order_at(f, x, e);
    const Vec fd = central_difference([&](const Vec& y) { return grad_at(f, y)[j]; }, x);
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(row[i], 0.5 * (A[3 * i + j] + A[3 * j + i]), 1e-14);
      EXPECT_NEAR(row[i], fd[i], 1e-5);
    }
  }
}

TEST(GradAsGraph, EveryOpSecondOrderMatchesFiniteDifferences) {
  const Vec x{0.3, -0.8, 1.1};
  const Vec dir{0.6, -0.2, 0.9};
  std::vector<std::pair<const char*, Builder>> cases = {
      {"tanh", [](Tape& t, Var v) { return t.sum(t.tanh(t.mul(v, v))); }},
      {"sigmoid", [](Tape& t, Var v) { return t.dot(t.sigmoid(v), v); }},
      {"softplus", [](Tape& t, Var v) { return t.sum(t.softplus(t.scale(1.5, v))); }},
      {"exp_log", [](Tape& t, Var v) { return t.sum(t.log(t.add(t.exp(v), t.filled(1.0, 3)))); }},
      {"reciprocal", [](Tape& t, Var v) { return t.sum(t.reciprocal(t.add(t.square(v), t.filled(0.5, 3)))); }},
      {"scale", [](Tape& t, Var v) { return t.sum(t.scale(t.dot(v, v), t.tanh(v))); }},
  };
  for (const auto& [name, f] : cases) {
    const Vec analytic = second_order_at(f, x, dir);
    const Vec fd = central_difference(
        [&](const Vec& y) {
          const Vec g = grad_at(f, y);
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * dir[i];
          return s;
        },
        x);
    EXPECT_LT(rel_err(analytic, fd), 1e-7) << name;
  }
}

// Loss through a 5-step leapfrog rollout whose kicks use grad_as_graph nodes;
// its parameter gradient is a second-order quantity of the MLPs.
TEST(GradAsGraph, LeapfrogRolloutLossMatchesFiniteDifferences) {
  RngStream rng(5);
  SeparableHamiltonianModel m = SeparableHamiltonianModel::random(2, 8, rng);
  const Vec q0{0.5, -0.3}, p0{0.2, 0.7}, target{0.1, 0.1};
  const ParamList params = m.params();
  Tape t;
  const std::vector<Var> vars = bind_params(t, params);
  std::size_t cursor = 0;
  const HamiltonianVars hv = hamiltonian_vars_from(vars, cursor, m);
  const GraphState end = leapfrog_graph(hv, {t.input(q0), t.input(p0)}, t.scalar(0.1), 5);
  const Var diff = t.sub(end.q, t.constant(target));
  const Var loss = t.dot(diff, diff);
  const std::vector<Vec> g = t.gradients(loss, vars);

  const auto graph_loss = [&](SeparableHamiltonianModel& model) {
    const ParamList ps = model.params();
    Tape u;
    const std::vector<Var> vs = bind_params(u, ps);
    std::size_t c = 0;
    const HamiltonianVars h = hamiltonian_vars_from(vs, c, model);
    const GraphState e = leapfrog_graph(h, {u.input(q0), u.input(p0)}, u.scalar(0.1), 5);
    const Var dd = u.sub(e.q, u.constant(target));
    return u.scalar_value(u.dot(dd, dd));
  };

  for (int dir = 0; dir < 10; ++dir) {
    std::vector<Vec> d;
    double analytic = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      d.push_back(sample_gaussian(rng, params[i]->size(), 0.0, 1.0));
      for (std::size_t k = 0; k < d[i].size(); ++k) analytic += g[i][k] * d[i][k];
    }
    const double h = 1e-5;
    SeparableHamiltonianModel plus = m, minus = m;
    const ParamList pp = plus.params(), pm = minus.params();
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t k = 0; k < d[i].size(); ++k) {
        pp[i]->data[k] += h * d[i][k];
        pm[i]->data[k] -= h * d[i][k];
      }
    const double fd = (graph_loss(plus) - graph_loss(minus)) / (2 * h);
    EXPECT_LT(std::abs(fd - analytic), 1e-4 * std::max(1e-3, std::abs(analytic))) << "direction " << dir;
  }
}

// The graph rollout agrees with the numeric integrator on the same model.
TEST(GradAsGraph, GraphLeapfrogMatchesNumericLeapfrog) {
  RngStream rng(6);
  const SeparableHamiltonianModel m = SeparableHamiltonianModel::random(2, 8, rng);
  Tape t;
  SeparableHamiltonianModel copy = m;
  const std::vector<Var> vars = bind_params(t, copy.params());
  std::size_t cursor = 0;
  const HamiltonianVars hv = hamiltonian_vars_from(vars, cursor, m);
  const PhaseState s0({0.5, -0.3}, {0.2, 0.7});
  const auto states = leapfrog_graph_rollout(hv, {t.input(s0.q), t.input(s0.p)}, t.scalar(0.125), 4);
  PhaseState s = s0;
  for (int k = 1; k <= 4; ++k) {
    s = leapfrog_step(m, s, 0.125);
    for (int i = 0; i < 2; ++i) {
      EXPECT_NEAR(t.value(states[k].q)[i], s.q[i], 1e-13);
      EXPECT_NEAR(t.value(states[k].p)[i], s.p[i], 1e-13);
    }
  }
}
