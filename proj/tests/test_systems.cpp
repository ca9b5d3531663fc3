#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hamflow/systems.hpp"

using namespace hamflow;
using namespace hamflow::systems;

namespace {

// Central-difference gradients of H, independent of the analytic ones.
template <class H>
void expect_gradients_match(const H& h, const PhaseState& s, double rel_tol = 1e-5) {
  const double eps = 1e-5;
  const Vec gq = h.grad_q(s), gp = h.grad_p(s);
  for (std::size_t k = 0; k < s.dim(); ++k) {
    for (int which = 0; which < 2; ++which) {
      PhaseState a = s, b = s;
      (which ? a.p : a.q)[k] += eps;
      (which ? b.p : b.q)[k] -= eps;
      const double fd = (h.energy(a) - h.energy(b)) / (2 * eps);
      const double an = which ? gp[k] : gq[k];
      EXPECT_LE(std::abs(fd - an), rel_tol * std::max(1.0, std::abs(an))) << "coord " << k << " which " << which;
    }
  }
}

PhaseState random_box_state(RngStream& rng, std::size_t n) {
  PhaseState s{Vec(n), Vec(n)};
  for (auto& v : s.q) v = rng.uniform(-2.0, 2.0);
  for (auto& v : s.p) v = rng.uniform(-2.0, 2.0);
  return s;
}

double min_pair_distance(const PhaseState& s) {
  double best = INFINITY;
  const std::size_t n = s.dim() / 2;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      best = std::min(best, std::hypot(s.q[2 * i] - s.q[2 * j], s.q[2 * i + 1] - s.q[2 * j + 1]));
  return best;
}

}  // namespace

TEST(MassSpring, Examples) {
  const MassSpring h;
  EXPECT_DOUBLE_EQ(h.energy(PhaseState({1.0}, {0.0})), 1.0);
  EXPECT_DOUBLE_EQ(h.energy(PhaseState({0.0}, {0.0})), 0.0);
  EXPECT_DOUBLE_EQ(h.grad_q(PhaseState({1.0}, {0.0}))[0], 2.0);
  EXPECT_DOUBLE_EQ(h.grad_p(PhaseState({1.0}, {0.0}))[0], 0.0);
  EXPECT_TRUE(h.is_separable());
}

TEST(MassSpring, RejectsBadInput) {
  EXPECT_THROW(MassSpring({0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(MassSpring({1.0, -1.0}), std::invalid_argument);
  EXPECT_THROW(MassSpring().energy(PhaseState({1.0, 2.0}, {0.0, 0.0})), ShapeError);
}

TEST(Pendulum, Examples) {
  const Pendulum h;
  EXPECT_DOUBLE_EQ(h.energy(PhaseState({0.0}, {0.0})), 0.0);
  EXPECT_NEAR(h.energy(PhaseState({std::numbers::pi}, {0.0})), 6.0, 1e-12);
  EXPECT_DOUBLE_EQ(h.energy(PhaseState({0.0}, {1.0})), 1.0);
}

TEST(Pendulum, GradientFormula) {
  const Pendulum h;
  const PhaseState s({0.7}, {-1.3});
  EXPECT_NEAR(h.grad_q(s)[0], 2 * 0.5 * 3 * 1 * std::sin(0.7), 1e-14);
  EXPECT_NEAR(h.grad_p(s)[0], -1.3 / 0.5, 1e-14);
}

TEST(NBody, Examples) {
  const NBody two(NBodyParams::uniform(2));
  EXPECT_DOUBLE_EQ(two.energy(PhaseState({0, 0, 1, 0}, {0, 0, 0, 0})), -1.0);
  EXPECT_DOUBLE_EQ(two.energy(PhaseState({0, 0, 2, 0}, {0, 0, 0, 1})), 0.0);
  const NBody three(NBodyParams::uniform(3));
  const double r3 = std::sqrt(3.0) / 2.0;
  EXPECT_NEAR(three.energy(PhaseState({0, 0, 1, 0, 0.5, r3}, Vec(6, 0.0))), -3.0, 1e-12);
}

TEST(NBody, SingularityWithoutSoftening) {
  const NBody two(NBodyParams::uniform(2));
  EXPECT_THROW(two.energy(PhaseState({1, 1, 1, 1}, Vec(4, 0.0))), NumericalError);
  const NBody soft(NBodyParams::uniform(2, 1.0, 1.0, 0.1));
  EXPECT_NEAR(soft.energy(PhaseState({1, 1, 1, 1}, Vec(4, 0.0))), -10.0, 1e-12);
}

TEST(NBody, RejectsBadParams) {
  EXPECT_THROW(NBody(NBodyParams{1, {1.0}, 1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(NBody(NBodyParams{2, {1.0}, 1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(NBody(NBodyParams{2, {1.0, 0.0}, 1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(NBody(NBodyParams{2, {1.0, 1.0}, 1.0, -1.0}), std::invalid_argument);
}

TEST(NBody, TranslationInvariance) {
  RngStream rng(8);
  const NBody h(NBodyParams::uniform(3));
  for (int i = 0; i < 50; ++i) {
    PhaseState s = random_box_state(rng, 6);
    if (min_pair_distance(s) < 0.1) continue;
    PhaseState t = s;
    const double dx = rng.uniform(-3, 3), dy = rng.uniform(-3, 3);
    for (int b = 0; b < 3; ++b) t.q[2 * b] += dx, t.q[2 * b + 1] += dy;
    EXPECT_NEAR(h.energy(s), h.energy(t), 1e-12 * std::max(1.0, std::abs(h.energy(s))));
  }
}

TEST(Systems, GradientsMatchFiniteDifferences) {
  RngStream rng(99);
  const MassSpring ms;
  const Pendulum pd;
  const NBody two(NBodyParams::uniform(2)), three(NBodyParams{3, {1.0, 2.0, 0.5}, 1.5, 0.0});
  for (int i = 0; i < 100; ++i) {
    expect_gradients_match(ms, random_box_state(rng, 1));
    expect_gradients_match(pd, random_box_state(rng, 1));
    PhaseState s2 = random_box_state(rng, 4), s3 = random_box_state(rng, 6);
    if (min_pair_distance(s2) > 0.3) expect_gradients_match(two, s2);
    if (min_pair_distance(s3) > 0.3) expect_gradients_match(three, s3);
  }
}

TEST(Systems, SeparableGradientsIgnoreOtherHalf) {
  const Pendulum pd;
  EXPECT_EQ(pd.grad_q(PhaseState({0.4}, {1.0})), pd.grad_q(PhaseState({0.4}, {-3.0})));
  EXPECT_EQ(pd.grad_p(PhaseState({0.4}, {1.0})), pd.grad_p(PhaseState({-2.0}, {1.0})));
  const NBody nb(NBodyParams::uniform(2));
  const Vec q{0, 0, 1, 0.5};
  EXPECT_EQ(nb.grad_q(PhaseState(q, {1, 2, 3, 4})), nb.grad_q(PhaseState(q, {0, 0, 0, 0})));
}
