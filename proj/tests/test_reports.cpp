#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hamflow/reports.hpp"
#include "hamflow/systems.hpp"

using namespace hamflow;
using hamflow::systems::MassSpring;

namespace {

Trajectory constant_traj(std::size_t n, PhaseState s) {
  Trajectory t;
  t.dt = 0.1;
  t.states.assign(n, s);
  return t;
}

double gauss2(double x, double y, double mx, double my, double h) {
  return std::exp(-((x - mx) * (x - mx) + (y - my) * (y - my)) / (2 * h * h)) / (2 * std::numbers::pi * h * h);
}

}  // namespace

TEST(PerStepMse, IdenticalIsZero) {
  const Trajectory a = constant_traj(5, PhaseState({0.3, 1.0}, {-2.0, 0.5}));
  const MetricSeries m = per_step_mse(a, a);
  ASSERT_EQ(m.steps(), 5u);
  for (double v : m.mean) EXPECT_EQ(v, 0.0);
}

TEST(PerStepMse, UniformOffset) {
  const Trajectory a = constant_traj(4, PhaseState({0.3, 1.0}, {-2.0, 0.5}));
  const Trajectory b = constant_traj(4, PhaseState({0.3 + 0.25, 1.25}, {-1.75, 0.75}));
  for (double v : per_step_mse(a, b).mean) EXPECT_NEAR(v, 0.0625, 1e-15);
}

TEST(PerStepMse, HandComputedTwoSteps) {
  Trajectory a, b;
  a.states = {PhaseState({0.0}, {0.0}), PhaseState({1.0}, {2.0})};
  b.states = {PhaseState({1.0}, {1.0}), PhaseState({1.0}, {-1.0})};
  const MetricSeries m = per_step_mse(a, b);
  EXPECT_DOUBLE_EQ(m.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(m.mean[1], 4.5);
  EXPECT_EQ(per_step_mse(b, a).mean, m.mean);
  Trajectory c = a;
  c.states.pop_back();
  EXPECT_THROW(per_step_mse(a, c), ShapeError);
}

TEST(MetricSeries, AggregateAcrossTrajectories) {
  MetricSeries m;
  m.per_trajectory = {{1.0, 2.0}, {3.0, 2.0}};
  m.aggregate();
  EXPECT_EQ(m.mean, (Vec{2.0, 2.0}));
  EXPECT_EQ(m.stddev, (Vec{1.0, 0.0}));
  MetricSeries extra;
  extra.per_trajectory = {{5.0, 2.0}};
  m.append(extra);
  EXPECT_DOUBLE_EQ(m.mean[0], 3.0);
  EXPECT_NEAR(m.stddev[0], std::sqrt(8.0 / 3.0), 1e-15);
  MetricSeries bad;
  bad.per_trajectory = {{1.0}, {1.0, 2.0}};
  EXPECT_THROW(bad.aggregate(), ShapeError);
}

TEST(HamiltonianVariance, PopulationVariance) {
  const MassSpring h({1.0, 1.0});
  Trajectory t;
  // H = q^2 / 2 gives energies 0 and 2.
  t.states = {PhaseState({0.0}, {0.0}), PhaseState({2.0}, {0.0})};
  EXPECT_DOUBLE_EQ(hamiltonian_variance(h, t), 1.0);
  EXPECT_NEAR(hamiltonian_variance(h, constant_traj(7, PhaseState({0.4}, {-1.1}))), 0.0, 1e-28);
  EXPECT_THROW(hamiltonian_variance(h, Trajectory{}), std::invalid_argument);
}

TEST(HamiltonianVariance, InvariantUnderEnergyShift) {
  Trajectory t;
  for (int i = 0; i < 10; ++i) t.states.push_back(PhaseState({0.1 * i}, {std::sin(i)}));
  const MassSpring h;
  EXPECT_NEAR(hamiltonian_variance(h, t), hamiltonian_variance(ShiftedEnergy<MassSpring>{h, 5.0}, t), 1e-13);
}

TEST(Kde, SingleSampleIsGaussian) {
  const Grid2D g{-3, 3, -3, 3, 60, 60};
  const std::array<double, 2> s{0.4, -0.7};
  const DensityGrid d = kde_grid(std::span(&s, 1), 0.3, g);
  for (int j = 0; j < g.ny; j += 7)
    for (int i = 0; i < g.nx; i += 5) EXPECT_NEAR(d.at(i, j), gauss2(g.x(i), g.y(j), 0.4, -0.7, 0.3), 1e-12);
}

TEST(Kde, IsMeanOfSingleSampleEstimates) {
  const Grid2D g{-2, 2, -2, 2, 30, 30};
  const std::vector<std::array<double, 2>> s{{0.0, 0.0}, {1.0, -0.5}, {-0.3, 0.8}};
  const DensityGrid all = kde_grid(s, 0.25, g);
  for (std::size_t k = 0; k < all.values.size(); ++k) {
    double mean = 0.0;
    for (const auto& x : s) mean += kde_grid(std::span(&x, 1), 0.25, g).values[k] / 3.0;
    EXPECT_NEAR(all.values[k], mean, 1e-12);
  }
}

TEST(Kde, MassAndDomainMonotonicity) {
  const std::vector<std::array<double, 2>> s{{0.0, 0.0}, {0.5, 0.5}, {-0.5, 0.2}};
  EXPECT_NEAR(kde_grid(s, 0.2, Grid2D{-3, 3, -3, 3, 120, 120}).mass(), 1.0, 0.02);
  double prev = 0.0;
  for (double half : {0.5, 1.0, 2.0, 4.0}) {
    const double m = kde_grid(s, 0.4, Grid2D{-half, half, -half, half, 200, 200}).mass();
    EXPECT_GT(m, prev);
    prev = m;
  }
  EXPECT_THROW(kde_grid(std::span<const std::array<double, 2>>(), 0.2, Grid2D{}), std::invalid_argument);
  EXPECT_THROW(kde_grid(s, 0.0, Grid2D{}), std::invalid_argument);
  EXPECT_THROW(kde_grid(s, 0.2, Grid2D{1, 0, -1, 1, 10, 10}), std::invalid_argument);
}

TEST(GaussianSmooth, PointMassBecomesKernel) {
  const Grid2D g{-2, 2, -2, 2, 40, 40};
  DensityGrid d{g, Vec(1600, 0.0)};
  d.values[20 * 40 + 20] = 1.0 / g.cell_area();
  const DensityGrid sm = gaussian_smooth(d, 0.3);
  for (int j = 0; j < 40; j += 3)
    for (int i = 0; i < 40; i += 3) EXPECT_NEAR(sm.at(i, j), gauss2(g.x(i), g.y(j), g.x(20), g.y(20), 0.3), 1e-12);
  EXPECT_NEAR(sm.mass(), 1.0, 1e-3);
}

TEST(GaussianSmooth, MatchesKdeOfGridSamples) {
  const Grid2D g{-2, 2, -2, 2, 20, 20};
  DensityGrid d{g, Vec(400, 0.0)};
  std::vector<std::array<double, 2>> pts{{g.x(5), g.y(7)}, {g.x(12), g.y(10)}};
  d.values[7 * 20 + 5] = 0.5 / g.cell_area();
  d.values[10 * 20 + 12] = 0.5 / g.cell_area();
  const DensityGrid a = gaussian_smooth(d, 0.35), b = kde_grid(pts, 0.35, g);
  for (std::size_t k = 0; k < a.values.size(); ++k) EXPECT_NEAR(a.values[k], b.values[k], 1e-12);
}

TEST(TotalVariation, Properties) {
  const Grid2D g{0, 1, 0, 1, 10, 10};
  const DensityGrid uniform = evaluate_grid(g, [](double, double) { return 1.0; });
  const DensityGrid left = evaluate_grid(g, [](double x, double) { return x < 0.5 ? 2.0 : 0.0; });
  EXPECT_EQ(total_variation(uniform, uniform), 0.0);
  EXPECT_NEAR(total_variation(uniform, left), 0.5, 1e-12);
  EXPECT_EQ(total_variation(uniform, left), total_variation(left, uniform));
  const DensityGrid right = evaluate_grid(g, [](double x, double) { return x < 0.5 ? 0.0 : 2.0; });
  EXPECT_NEAR(total_variation(left, right), 1.0, 1e-12);
  EXPECT_THROW(total_variation(uniform, evaluate_grid(Grid2D{0, 1, 0, 1, 5, 5}, [](double, double) { return 1.0; })),
               ShapeError);
}

TEST(EvaluateGrid, CellCentersAndLayout) {
  const Grid2D g{0, 4, 10, 12, 4, 2};
  const DensityGrid d = evaluate_grid(g, [](double x, double y) { return 100 * x + y; });
  EXPECT_DOUBLE_EQ(d.at(0, 0), 50 + 10.5);
  EXPECT_DOUBLE_EQ(d.at(3, 1), 350 + 11.5);
  EXPECT_DOUBLE_EQ(d.values[1 * 4 + 2], d.at(2, 1));
  EXPECT_DOUBLE_EQ(d.mass(), 2 * (50 + 150 + 250 + 350) + 4 * (10.5 + 11.5));
}
