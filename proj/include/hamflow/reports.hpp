#pragma once

// Evaluation metrics: per-step MSE curves, energy variance along a
// trajectory, Gaussian KDE on a grid and total-variation distance.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "hamflow/core.hpp"

namespace hamflow {

/// Per-step values for one or more trajectories, with their mean and
/// standard deviation across trajectories.
struct MetricSeries {
  std::string name;
  std::vector<Vec> per_trajectory;  // [trajectory][step]
  Vec mean;
  Vec stddev;

  std::size_t steps() const { return mean.size(); }

  /// Recomputes mean and (population) std across trajectories.
  void aggregate() {
    if (per_trajectory.empty()) throw std::invalid_argument("MetricSeries: nothing to aggregate");
    const std::size_t n = per_trajectory.front().size();
    for (const Vec& v : per_trajectory)
      if (v.size() != n) throw ShapeError("MetricSeries: trajectories have different lengths");
    mean.assign(n, 0.0);
    stddev.assign(n, 0.0);
    const double k = static_cast<double>(per_trajectory.size());
    for (const Vec& v : per_trajectory)
      for (std::size_t t = 0; t < n; ++t) mean[t] += v[t] / k;
    for (const Vec& v : per_trajectory)
      for (std::size_t t = 0; t < n; ++t) stddev[t] += (v[t] - mean[t]) * (v[t] - mean[t]) / k;
    for (double& s : stddev) s = std::sqrt(s);
  }

  void append(const MetricSeries& other) {
    per_trajectory.insert(per_trajectory.end(), other.per_trajectory.begin(), other.per_trajectory.end());
    aggregate();
  }
};

/// Mean over coordinates of the squared difference at every step.
inline MetricSeries per_step_mse(const Trajectory& predicted, const Trajectory& target) {
  if (predicted.size() != target.size()) throw ShapeError("per_step_mse: trajectory lengths differ");
  if (predicted.dim() != target.dim()) throw ShapeError("per_step_mse: state dimensions differ");
  MetricSeries m;
  m.name = "mse";
  Vec v(predicted.size(), 0.0);
  const double coords = 2.0 * static_cast<double>(predicted.dim());
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    const PhaseState& a = predicted.states[t];
    const PhaseState& b = target.states[t];
    double acc = 0.0;
    for (std::size_t k = 0; k < a.dim(); ++k) {
      acc += (a.q[k] - b.q[k]) * (a.q[k] - b.q[k]);
      acc += (a.p[k] - b.p[k]) * (a.p[k] - b.p[k]);
    }
    v[t] = coords > 0 ? acc / coords : 0.0;
  }
  m.per_trajectory.push_back(std::move(v));
  m.aggregate();
  return m;
}

/// Population variance of H over the states of `traj`.
template <EnergyFunction H>
double hamiltonian_variance(const H& h, const Trajectory& traj) {
  if (traj.states.empty()) throw std::invalid_argument("hamiltonian_variance: empty trajectory");
  Vec e;
  e.reserve(traj.size());
  for (const auto& s : traj.states) e.push_back(h.energy(s));
  double mean = 0.0;
  for (double x : e) mean += x;
  mean /= static_cast<double>(e.size());
  double var = 0.0;
  for (double x : e) var += (x - mean) * (x - mean);
  return var / static_cast<double>(e.size());
}

// ---------------------------------------------------------------------------
// Grids

/// Regular grid of nx * ny cells over [x0, x1] x [y0, y1]; values sit at
/// cell centers, row-major with y as the row index.
struct Grid2D {
  double x0 = -4.0, x1 = 4.0;
  double y0 = -4.0, y1 = 4.0;
  int nx = 100, ny = 100;

  void validate() const {
    if (nx < 1 || ny < 1 || !(x1 > x0) || !(y1 > y0)) throw std::invalid_argument("Grid2D: invalid extent");
  }
  double dx() const { return (x1 - x0) / nx; }
  double dy() const { return (y1 - y0) / ny; }
  double x(int i) const { return x0 + (i + 0.5) * dx(); }
  double y(int j) const { return y0 + (j + 0.5) * dy(); }
  double cell_area() const { return dx() * dy(); }
};

struct DensityGrid {
  Grid2D grid;
  Vec values;  // size ny * nx

  double at(int i, int j) const { return values[static_cast<std::size_t>(j) * grid.nx + i]; }
  double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * grid.cell_area();
  }
};

/// Evaluates f(x, y) at every cell center.
template <class F>
DensityGrid evaluate_grid(const Grid2D& g, F&& f) {
  g.validate();
  DensityGrid out{g, Vec(static_cast<std::size_t>(g.nx) * g.ny)};
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) out.values[static_cast<std::size_t>(j) * g.nx + i] = f(g.x(i), g.y(j));
  return out;
}

/// Isotropic Gaussian kernel density estimate of 2-D samples.
inline DensityGrid kde_grid(std::span<const std::array<double, 2>> samples, double bandwidth, const Grid2D& g) {
  if (samples.empty()) throw std::invalid_argument("kde_grid: no samples");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_grid: bandwidth must be > 0");
  g.validate();
  DensityGrid out{g, Vec(static_cast<std::size_t>(g.nx) * g.ny, 0.0)};
  const double norm = 1.0 / (2.0 * std::numbers::pi * bandwidth * bandwidth * static_cast<double>(samples.size()));
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  // separable kernel: exp(-(dx^2 + dy^2) / 2h^2) = kx * ky
  Vec kx(static_cast<std::size_t>(g.nx)), ky(static_cast<std::size_t>(g.ny));
  for (const auto& s : samples) {
    for (int i = 0; i < g.nx; ++i) kx[i] = std::exp(-(g.x(i) - s[0]) * (g.x(i) - s[0]) * inv2h2);
    for (int j = 0; j < g.ny; ++j) ky[j] = std::exp(-(g.y(j) - s[1]) * (g.y(j) - s[1]) * inv2h2);
    for (int j = 0; j < g.ny; ++j) {
      if (ky[j] == 0.0) continue;
      double* row = out.values.data() + static_cast<std::size_t>(j) * g.nx;
      for (int i = 0; i < g.nx; ++i) row[i] += ky[j] * kx[i];
    }
  }
  for (double& v : out.values) v *= norm;
  return out;
}

/// Convolution of a grid density with an isotropic Gaussian kernel, by
/// separable discrete sums over the grid (mass outside the grid is lost).
inline DensityGrid gaussian_smooth(const DensityGrid& d, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("gaussian_smooth: bandwidth must be > 0");
  const Grid2D& g = d.grid;
  const auto kernel = [&](int n, double step) {
    std::vector<Vec> k(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(n)));
    const double c = step / (std::sqrt(2.0 * std::numbers::pi) * bandwidth);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const double u = (a - b) * step / bandwidth;
        k[a][b] = c * std::exp(-0.5 * u * u);
      }
    return k;
  };
  const auto kx = kernel(g.nx, g.dx());
  const auto ky = kernel(g.ny, g.dy());
  Vec tmp(d.values.size(), 0.0), out(d.values.size(), 0.0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double s = 0.0;
      for (int b = 0; b < g.nx; ++b) s += kx[i][b] * d.at(b, j);
      tmp[static_cast<std::size_t>(j) * g.nx + i] = s;
    }
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double s = 0.0;
      for (int b = 0; b < g.ny; ++b) s += ky[j][b] * tmp[static_cast<std::size_t>(b) * g.nx + i];
      out[static_cast<std::size_t>(j) * g.nx + i] = s;
    }
  return {g, std::move(out)};
}

/// 1/2 * integral |a - b| over the common grid.
inline double total_variation(const DensityGrid& a, const DensityGrid& b) {
  if (a.values.size() != b.values.size() || a.grid.nx != b.grid.nx || a.grid.ny != b.grid.ny)
    throw ShapeError("total_variation: grids differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return 0.5 * s * a.grid.cell_area();
}

}  // namespace hamflow
