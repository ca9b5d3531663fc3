#pragma once

// Closed-form Hamiltonians of the four benchmark systems with analytic
// gradients. All are separable: H = T(p) + V(q).

#include <cmath>
#include <string>

#include "hamflow/core.hpp"

namespace hamflow::systems {

namespace detail {
inline void check_dim(const PhaseState& s, std::size_t n, const char* who) {
  if (s.q.size() != n || s.p.size() != n)
    throw ShapeError(std::string(who) + ": expected dimension " + std::to_string(n) + ", got q=" +
                     std::to_string(s.q.size()) + " p=" + std::to_string(s.p.size()));
}
}  // namespace detail

struct MassSpringParams {
  double k = 2.0;
  double m = 0.5;
};

/// H = k q^2 / 2 + p^2 / 2m
class MassSpring {
 public:
  explicit MassSpring(MassSpringParams params = {}) : par_(params) {
    if (!(par_.k > 0.0) || !(par_.m > 0.0)) throw std::invalid_argument("MassSpring: k and m must be > 0");
  }
  const MassSpringParams& params() const noexcept { return par_; }

  double energy(const PhaseState& s) const {
    detail::check_dim(s, 1, "MassSpring");
    return 0.5 * par_.k * s.q[0] * s.q[0] + s.p[0] * s.p[0] / (2.0 * par_.m);
  }
  Vec grad_q(const PhaseState& s) const {
    detail::check_dim(s, 1, "MassSpring");
    return {par_.k * s.q[0]};
  }
  Vec grad_p(const PhaseState& s) const {
    detail::check_dim(s, 1, "MassSpring");
    return {s.p[0] / par_.m};
  }
  bool is_separable() const noexcept { return true; }
  std::size_t dim() const noexcept { return 1; }

 private:
  MassSpringParams par_;
};

struct PendulumParams {
  double m = 0.5;
  double g = 3.0;
  double l = 1.0;
};

/// H = 2 m g l (1 - cos q) + p^2 / (2 m l^2). The potential keeps the factor
/// 2mgl used by the benchmark datasets rather than the textbook mgl.
class Pendulum {
 public:
  explicit Pendulum(PendulumParams params = {}) : par_(params) {
    if (!(par_.m > 0.0) || !(par_.g > 0.0) || !(par_.l > 0.0))
      throw std::invalid_argument("Pendulum: m, g and l must be > 0");
  }
  const PendulumParams& params() const noexcept { return par_; }

  double energy(const PhaseState& s) const {
    detail::check_dim(s, 1, "Pendulum");
    const double inertia = par_.m * par_.l * par_.l;
    return 2.0 * par_.m * par_.g * par_.l * (1.0 - std::cos(s.q[0])) + s.p[0] * s.p[0] / (2.0 * inertia);
  }
  Vec grad_q(const PhaseState& s) const {
    detail::check_dim(s, 1, "Pendulum");
    return {2.0 * par_.m * par_.g * par_.l * std::sin(s.q[0])};
  }
  Vec grad_p(const PhaseState& s) const {
    detail::check_dim(s, 1, "Pendulum");
    return {s.p[0] / (par_.m * par_.l * par_.l)};
  }
  bool is_separable() const noexcept { return true; }
  std::size_t dim() const noexcept { return 1; }

 private:
  PendulumParams par_;
};

struct NBodyParams {
  int n_bodies = 2;
  Vec masses = {1.0, 1.0};
  double g = 1.0;
  double softening = 0.0;

  static NBodyParams uniform(int n, double mass = 1.0, double g = 1.0, double softening = 0.0) {
    return NBodyParams{n, Vec(static_cast<std::size_t>(n), mass), g, softening};
  }
};

/// Planar gravitational n-body problem,
///   H = sum_i |p_i|^2 / 2 m_i - sum_{i<j} g m_i m_j / sqrt(|q_j - q_i|^2 + eps^2).
/// q and p are body-major: [x1, y1, x2, y2, ...].
class NBody {
 public:
  explicit NBody(NBodyParams params) : par_(std::move(params)) {
    if (par_.n_bodies < 2) throw std::invalid_argument("NBody: need at least two bodies");
    if (par_.masses.size() != static_cast<std::size_t>(par_.n_bodies))
      throw std::invalid_argument("NBody: len(masses) != n_bodies");
    for (double m : par_.masses)
      if (!(m > 0.0)) throw std::invalid_argument("NBody: masses must be > 0");
    if (!(par_.softening >= 0.0)) throw std::invalid_argument("NBody: softening must be >= 0");
  }
  const NBodyParams& params() const noexcept { return par_; }

  double energy(const PhaseState& s) const {
    detail::check_dim(s, dim(), "NBody");
    const int n = par_.n_bodies;
    double kinetic = 0.0;
    for (int i = 0; i < n; ++i) {
      const double px = s.p[2 * i], py = s.p[2 * i + 1];
      kinetic += (px * px + py * py) / (2.0 * par_.masses[i]);
    }
    double potential = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        potential -= par_.g * par_.masses[i] * par_.masses[j] / distance(s.q, i, j);
    return kinetic + potential;
  }

  Vec grad_q(const PhaseState& s) const {
    detail::check_dim(s, dim(), "NBody");
    const int n = par_.n_bodies;
    Vec g(dim(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double d = distance(s.q, i, j);
        const double c = par_.g * par_.masses[i] * par_.masses[j] / (d * d * d);
        const double dx = s.q[2 * i] - s.q[2 * j], dy = s.q[2 * i + 1] - s.q[2 * j + 1];
        g[2 * i] += c * dx;
        g[2 * i + 1] += c * dy;
        g[2 * j] -= c * dx;
        g[2 * j + 1] -= c * dy;
      }
    return g;
  }

  Vec grad_p(const PhaseState& s) const {
    detail::check_dim(s, dim(), "NBody");
    Vec g(dim());
    for (int i = 0; i < par_.n_bodies; ++i) {
      g[2 * i] = s.p[2 * i] / par_.masses[i];
      g[2 * i + 1] = s.p[2 * i + 1] / par_.masses[i];
    }
    return g;
  }

  bool is_separable() const noexcept { return true; }
  std::size_t dim() const noexcept { return 2 * static_cast<std::size_t>(par_.n_bodies); }

 private:
  double distance(const Vec& q, int i, int j) const {
    const double dx = q[2 * j] - q[2 * i], dy = q[2 * j + 1] - q[2 * i + 1];
    const double d = std::sqrt(dx * dx + dy * dy + par_.softening * par_.softening);
    if (d == 0.0)
      throw NumericalError("NBody: bodies " + std::to_string(i) + " and " + std::to_string(j) +
                           " coincide with zero softening");
    return d;
  }

  NBodyParams par_;
};

inline MassSpring mass_spring_hamiltonian(MassSpringParams p = {}) { return MassSpring(p); }
inline Pendulum pendulum_hamiltonian(PendulumParams p = {}) { return Pendulum(p); }
inline NBody nbody_hamiltonian(NBodyParams p) { return NBody(std::move(p)); }

static_assert(EnergyFunction<MassSpring>);
static_assert(EnergyFunction<Pendulum>);
static_assert(EnergyFunction<NBody>);

}  // namespace hamflow::systems
