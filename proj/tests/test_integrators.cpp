#include <gtest/gtest.h>

#include <cmath>

#include "hamflow/integrators.hpp"
#include "hamflow/models.hpp"
#include "hamflow/reports.hpp"
#include "hamflow/systems.hpp"

using namespace hamflow;
using systems::MassSpring;
using systems::Pendulum;

namespace {

// Non-separable H = q^2 p^2 / 2, only for rejecting leapfrog.
struct Coupled {
  double energy(const PhaseState& s) const { return 0.5 * s.q[0] * s.q[0] * s.p[0] * s.p[0]; }
  Vec grad_q(const PhaseState& s) const { return {s.q[0] * s.p[0] * s.p[0]}; }
  Vec grad_p(const PhaseState& s) const { return {s.q[0] * s.q[0] * s.p[0]}; }
  bool is_separable() const { return false; }
  std::size_t dim() const { return 1; }
};

// Exact mass-spring flow (k = 2, m = 0.5, omega = 2): q = q0 cos wt + p0/(m w) sin wt.
PhaseState exact_mass_spring(const PhaseState& s, double t) {
  const double w = 2.0, m = 0.5;
  const double q = s.q[0] * std::cos(w * t) + s.p[0] / (m * w) * std::sin(w * t);
  const double p = -s.q[0] * m * w * std::sin(w * t) + s.p[0] * std::cos(w * t);
  return PhaseState({q}, {p});
}

}  // namespace

TEST(EulerStep, HandUpdate) {
  const PhaseState s = euler_step(MassSpring(), PhaseState({1.0}, {0.0}), 0.1);
  EXPECT_NEAR(s.q[0], 1.0, 1e-15);
  EXPECT_NEAR(s.p[0], -0.2, 1e-15);
}

TEST(EulerStep, IdentityAndFixedPoint) {
  const PhaseState s({0.3}, {-0.4});
  EXPECT_EQ(euler_step(Pendulum(), s, 0.0).q, s.q);
  EXPECT_EQ(euler_step(Pendulum(), s, 0.0).p, s.p);
  const PhaseState z = euler_step(Pendulum(), PhaseState({0.0}, {0.0}), 0.37);
  EXPECT_EQ(z.q[0], 0.0);
  EXPECT_EQ(z.p[0], 0.0);
}

TEST(LeapfrogStep, HandUpdate) {
  const PhaseState s = leapfrog_step(MassSpring(), PhaseState({1.0}, {0.0}), 0.1);
  EXPECT_NEAR(s.q[0], 0.98, 1e-15);
  EXPECT_NEAR(s.p[0], -0.198, 1e-15);
}

TEST(LeapfrogStep, IdentityAndExactInverse) {
  const PhaseState s({0.3}, {-0.4});
  EXPECT_EQ(leapfrog_step(Pendulum(), s, 0.0).q, s.q);
  RngStream rng(4);
  for (int i = 0; i < 20; ++i) {
    const PhaseState a(sample_gaussian(rng, 1, 0, 1), sample_gaussian(rng, 1, 0, 1));
    const PhaseState back = leapfrog_step(Pendulum(), leapfrog_step(Pendulum(), a, 0.125), -0.125);
    EXPECT_LE(max_abs_diff(a, back), 1e-12);
  }
}

TEST(LeapfrogStep, RejectsNonSeparable) {
  EXPECT_THROW(leapfrog_step(Coupled(), PhaseState({1.0}, {1.0}), 0.1), std::invalid_argument);
  EXPECT_THROW(rollout(Coupled(), PhaseState({1.0}, {1.0}), {Integrator::leapfrog, 0.1, 3}), std::invalid_argument);
  EXPECT_NO_THROW(rollout(Coupled(), PhaseState({1.0}, {1.0}), {Integrator::rk4, 0.1, 3}));
}

TEST(Rk4Step, IdentityAndFixedPoint) {
  const PhaseState s({0.3}, {-0.4});
  EXPECT_EQ(rk4_step(MassSpring(), s, 0.0).q, s.q);
  const PhaseState z = rk4_step(Pendulum(), PhaseState({0.0}, {0.0}), 0.5);
  EXPECT_EQ(z.q[0], 0.0);
  EXPECT_EQ(z.p[0], 0.0);
}

// One RK4 step of the harmonic oscillator multiplies by the degree-4 Taylor
// polynomial of exp(dt A); the remainder is (w dt)^5 / 5! to leading order,
// about 2.7e-6 at w dt = 0.2. A 1e-6 agreement with any accurate reference is
// therefore out of reach; the checks pin the error to that known size.
TEST(Rk4Step, AgainstExactAndFineEuler) {
  const PhaseState s0({1.0}, {0.0});
  const PhaseState r = rk4_step(MassSpring(), s0, 0.1);
  const PhaseState ex = exact_mass_spring(s0, 0.1);
  const double bound = std::pow(0.2, 5) / 120.0;
  EXPECT_LE(max_abs_diff(r, ex), 1.1 * bound);
  EXPECT_GE(max_abs_diff(r, ex), 0.5 * bound);

  PhaseState e = s0;
  for (int k = 0; k < 10000; ++k) e = euler_step(MassSpring(), e, 1e-5);
  EXPECT_LE(max_abs_diff(e, ex), 3e-6);  // first-order oracle: ~ w^2 h T / 2
  EXPECT_LE(max_abs_diff(r, e), 6e-6);
}

TEST(Rk4Step, LocalOrderFive) {
  const PhaseState s0({0.8}, {0.3});
  const double e1 = max_abs_diff(rk4_step(Pendulum(), s0, 0.2), reference_rollout(Pendulum(), s0, 0.2, 1, 2000).states[1]);
  const double e2 = max_abs_diff(rk4_step(Pendulum(), s0, 0.1), reference_rollout(Pendulum(), s0, 0.1, 1, 1000).states[1]);
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 24.0);
  EXPECT_LE(ratio, 40.0);
}

TEST(Rollout, ZeroSteps) {
  const Trajectory t = rollout(MassSpring(), PhaseState({1.0}, {0.0}), {Integrator::euler, 0.1, 0});
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.states[0].q[0], 1.0);
}

// Kick-drift-kick leapfrog on the oscillator exactly conserves the shadow
// energy p^2/2m + (k q^2/2)(1 - k dt^2/4m). H itself then swings between the
// shadow value and shadow / (1 - k dt^2/4m), a relative band of about 1.6% at
// dt = 0.125, bounded and without secular drift.
TEST(Rollout, LeapfrogEnergyBounded) {
  const MassSpring h;
  const double k = 2.0, m = 0.5, dt = 0.125;
  const double a = 1.0 - k * dt * dt / (4.0 * m);
  const PhaseState s0({0.6}, {-0.5});
  const Trajectory t = rollout(h, s0, {Integrator::leapfrog, dt, 30});
  ASSERT_EQ(t.size(), 31u);
  const auto shadow = [&](const PhaseState& s) { return s.p[0] * s.p[0] / (2 * m) + 0.5 * k * s.q[0] * s.q[0] * a; };
  const double e0 = h.energy(s0);
  double worst = 0.0;
  for (const auto& s : t.states) {
    worst = std::max(worst, std::abs(h.energy(s) - e0) / e0);
    EXPECT_NEAR(shadow(s), shadow(s0), 1e-12);
  }
  EXPECT_LE(worst, 1.0 / a - 1.0 + 1e-12);
  const Trajectory te = rollout(h, s0, {Integrator::euler, dt, 30});
  EXPECT_GT(std::abs(h.energy(te.states.back()) - e0) / e0, 1.0);
}

TEST(Rollout, ForwardBackwardRoundTrip) {
  for (const AnyEnergy& h : {AnyEnergy(MassSpring()), AnyEnergy(Pendulum())}) {
    const PhaseState s0({0.9}, {0.4});
    const Trajectory f = rollout(h, s0, {Integrator::leapfrog, 0.125, 100});
    const Trajectory b = rollout(h, f.states.back(), {Integrator::leapfrog, -0.125, 100});
    EXPECT_LE(max_abs_diff(b.states.back(), s0), 1e-9);
    const Trajectory fe = rollout(h, s0, {Integrator::euler, 0.125, 30});
    const Trajectory be = rollout(h, fe.states.back(), {Integrator::euler, -0.125, 30});
    const Trajectory fl = rollout(h, s0, {Integrator::leapfrog, 0.125, 30});
    const Trajectory bl = rollout(h, fl.states.back(), {Integrator::leapfrog, -0.125, 30});
    EXPECT_GT(max_abs_diff(be.states.back(), s0), max_abs_diff(bl.states.back(), s0));
  }
}

TEST(Rollout, NonFiniteReportsStep) {
  // Stiff spring with a huge Euler step: the state grows by |1 + i w dt| per
  // step and overflows after a few hundred steps.
  const MassSpring h({1e6, 1e-6});
  try {
    rollout(h, PhaseState({1.0}, {0.0}), {Integrator::euler, 10.0, 1000});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_GT(e.step(), 0);
    EXPECT_LE(e.step(), 1000);
  }
}

TEST(Rollout, RejectsBadSpec) {
  EXPECT_THROW(rollout(MassSpring(), PhaseState({1.0}, {0.0}), {Integrator::euler, 0.0, 3}), std::invalid_argument);
  EXPECT_THROW(rollout(MassSpring(), PhaseState({1.0}, {0.0}), {Integrator::euler, 0.1, -1}), std::invalid_argument);
  EXPECT_THROW(rollout(MassSpring(), PhaseState({1.0, 1.0}, {0.0, 0.0}), {Integrator::euler, 0.1, 1}), ShapeError);
}

TEST(JacobianDeterminant, Examples) {
  EXPECT_NEAR(jacobian_determinant(MassSpring(), PhaseState({0.3}, {0.2}), Integrator::euler, 0.1), 1.04, 1e-4);
  EXPECT_EQ(jacobian_determinant(Pendulum(), PhaseState({0.3}, {0.2}), Integrator::leapfrog, 0.0), 1.0);
  RngStream rng(12);
  for (int i = 0; i < 20; ++i) {
    const PhaseState s(sample_gaussian(rng, 1, 0, 1), sample_gaussian(rng, 1, 0, 1));
    EXPECT_NEAR(jacobian_determinant(Pendulum(), s, Integrator::leapfrog, 0.125), 1.0, 1e-6);
  }
}

TEST(JacobianDeterminant, LearnedModelIsVolumePreserving) {
  RngStream rng(31);
  const auto m = SeparableHamiltonianModel::random(3, 16, rng);
  for (int i = 0; i < 10; ++i) {
    const PhaseState s(sample_gaussian(rng, 3, 0, 1), sample_gaussian(rng, 3, 0, 1));
    EXPECT_NEAR(jacobian_determinant(m, s, Integrator::leapfrog, 0.125), 1.0, 1e-6);
  }
}

TEST(JacobianDeterminant, RejectsLargeSystems) {
  const systems::NBody h(systems::NBodyParams::uniform(5));
  PhaseState s{Vec(10), Vec(10)};
  for (int i = 0; i < 10; ++i) s.q[i] = i;
  EXPECT_THROW(jacobian_determinant(h, s, Integrator::leapfrog, 0.1), std::invalid_argument);
}

TEST(EnergyOrdering, LeapfrogBeatsEulerTenfold) {
  const MassSpring h;
  const PhaseState s0({0.7}, {0.2});
  const double vl = hamiltonian_variance(h, rollout(h, s0, {Integrator::leapfrog, 0.125, 30}));
  const double ve = hamiltonian_variance(h, rollout(h, s0, {Integrator::euler, 0.125, 30}));
  EXPECT_LT(10.0 * vl, ve);
}
