#pragma once

// Euler, RK4 and leapfrog steppers over an EnergyFunction, rollouts, and a
// finite-difference Jacobian determinant for checking volume preservation.

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "hamflow/core.hpp"

namespace hamflow {

enum class Integrator { euler, rk4, leapfrog };

inline const char* to_string(Integrator k) {
  switch (k) {
    case Integrator::euler: return "euler";
    case Integrator::rk4: return "rk4";
    case Integrator::leapfrog: return "leapfrog";
  }
  return "?";
}

inline Integrator parse_integrator(const std::string& s) {
  if (s == "euler") return Integrator::euler;
  if (s == "rk4") return Integrator::rk4;
  if (s == "leapfrog") return Integrator::leapfrog;
  throw std::invalid_argument("unknown integrator '" + s + "'");
}

inline IntegratorId to_id(Integrator k) {
  switch (k) {
    case Integrator::euler: return IntegratorId::euler;
    case Integrator::rk4: return IntegratorId::rk4;
    case Integrator::leapfrog: return IntegratorId::leapfrog;
  }
  return IntegratorId::reference;
}

inline constexpr double kDefaultDt = 0.125;

struct IntegratorSpec {
  Integrator kind = Integrator::leapfrog;
  double dt = kDefaultDt;
  int n_steps = 30;

  void validate() const {
    if (dt == 0.0 || !std::isfinite(dt)) throw std::invalid_argument("IntegratorSpec: dt must be finite and non-zero");
    if (n_steps < 0) throw std::invalid_argument("IntegratorSpec: n_steps must be >= 0");
  }
};

namespace detail {
inline void axpy(Vec& y, double a, const Vec& x) {
  if (y.size() != x.size()) throw ShapeError("gradient dimension does not match state");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}
}  // namespace detail

/// q' = q + dt dH/dp(q, p),  p' = p - dt dH/dq(q, p)
template <EnergyFunction H>
PhaseState euler_step(const H& h, const PhaseState& s, double dt) {
  PhaseState out = s;
  detail::axpy(out.q, dt, h.grad_p(s));
  detail::axpy(out.p, -dt, h.grad_q(s));
  return out;
}

/// Kick-drift-kick. Requires H = T(p) + V(q); stepping with -dt undoes a step
/// with +dt exactly (up to rounding).
template <EnergyFunction H>
PhaseState leapfrog_step(const H& h, const PhaseState& s, double dt) {
  if (!h.is_separable()) throw std::invalid_argument("leapfrog_step: Hamiltonian must be separable");
  PhaseState cur = s;
  detail::axpy(cur.p, -0.5 * dt, h.grad_q(cur));
  detail::axpy(cur.q, dt, h.grad_p(cur));
  detail::axpy(cur.p, -0.5 * dt, h.grad_q(cur));
  return cur;
}

/// Classical fourth-order Runge-Kutta on the field (dH/dp, -dH/dq).
template <EnergyFunction H>
PhaseState rk4_step(const H& h, const PhaseState& s, double dt) {
  const auto field = [&h](const PhaseState& x) {
    Vec dq = h.grad_p(x);
    Vec dp = h.grad_q(x);
    for (double& v : dp) v = -v;
    return PhaseState(std::move(dq), std::move(dp));
  };
  const auto shifted = [](const PhaseState& x, double a, const PhaseState& k) {
    PhaseState y = x;
    detail::axpy(y.q, a, k.q);
    detail::axpy(y.p, a, k.p);
    return y;
  };
  const PhaseState k1 = field(s);
  const PhaseState k2 = field(shifted(s, 0.5 * dt, k1));
  const PhaseState k3 = field(shifted(s, 0.5 * dt, k2));
  const PhaseState k4 = field(shifted(s, dt, k3));
  PhaseState out = s;
  for (std::size_t i = 0; i < s.dim(); ++i) {
    out.q[i] += dt * (k1.q[i] / 6.0 + k2.q[i] / 3.0 + k3.q[i] / 3.0 + k4.q[i] / 6.0);
    out.p[i] += dt * (k1.p[i] / 6.0 + k2.p[i] / 3.0 + k3.p[i] / 3.0 + k4.p[i] / 6.0);
  }
  return out;
}

template <EnergyFunction H>
PhaseState integrator_step(const H& h, const PhaseState& s, Integrator kind, double dt) {
  switch (kind) {
    case Integrator::euler: return euler_step(h, s, dt);
    case Integrator::rk4: return rk4_step(h, s, dt);
    case Integrator::leapfrog: return leapfrog_step(h, s, dt);
  }
  throw std::invalid_argument("integrator_step: bad kind");
}

/// n_steps + 1 states starting at s0. Throws NumericalError carrying the index
/// of the first step that produced a non-finite state.
template <EnergyFunction H>
Trajectory rollout(const H& h, const PhaseState& s0, const IntegratorSpec& spec) {
  spec.validate();
  if (spec.kind == Integrator::leapfrog && !h.is_separable())
    throw std::invalid_argument("rollout: leapfrog requires a separable Hamiltonian");
  if (s0.dim() != h.dim()) throw ShapeError("rollout: state dimension does not match Hamiltonian");
  s0.validate();
  Trajectory traj;
  traj.dt = spec.dt;
  traj.integrator = to_id(spec.kind);
  traj.states.reserve(static_cast<std::size_t>(spec.n_steps) + 1);
  traj.states.push_back(s0);
  for (int t = 1; t <= spec.n_steps; ++t) {
    PhaseState next = integrator_step(h, traj.states.back(), spec.kind, spec.dt);
    if (!next.valid()) throw NumericalError("rollout: non-finite state", t);
    traj.states.push_back(std::move(next));
  }
  return traj;
}

/// Fixed-step RK4 with `substeps` sub-steps per dt, sampled every dt.
template <EnergyFunction H>
Trajectory reference_rollout(const H& h, const PhaseState& s0, double dt, int n_steps, int substeps = 100) {
  if (dt == 0.0) throw std::invalid_argument("reference_rollout: dt must be non-zero");
  if (substeps < 1) throw std::invalid_argument("reference_rollout: substeps must be >= 1");
  s0.validate();
  Trajectory traj;
  traj.dt = dt;
  traj.integrator = IntegratorId::reference;
  traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.states.push_back(s0);
  const double h_sub = dt / substeps;
  for (int t = 1; t <= n_steps; ++t) {
    PhaseState s = traj.states.back();
    for (int k = 0; k < substeps; ++k) s = rk4_step(h, s, h_sub);
    if (!s.valid()) throw NumericalError("reference_rollout: non-finite state", t);
    traj.states.push_back(std::move(s));
  }
  return traj;
}

/// det d(step(s))/ds by central differences. Only for small systems
/// (n <= 8, i.e. a phase space of at most 16 dimensions).
template <EnergyFunction H>
double jacobian_determinant(const H& h, const PhaseState& s, Integrator kind, double dt, double fd_step = 1e-6) {
  const std::size_t n = s.dim();
  if (n > 8) throw std::invalid_argument("jacobian_determinant: dimension " + std::to_string(n) + " > 8");
  if (dt == 0.0) return 1.0;
  const std::size_t m = 2 * n;
  const Vec x0 = state_concat(s);
  Eigen::MatrixXd jac(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    Vec xp = x0, xm = x0;
    xp[j] += fd_step;
    xm[j] -= fd_step;
    const Vec yp = state_concat(integrator_step(h, state_split(xp), kind, dt));
    const Vec ym = state_concat(integrator_step(h, state_split(xm), kind, dt));
    for (std::size_t i = 0; i < m; ++i) jac(i, j) = (yp[i] - ym[i]) / (2.0 * fd_step);
  }
  return jac.determinant();
}

}  // namespace hamflow
