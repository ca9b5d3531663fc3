#pragma once

// Synthetic trajectory datasets: initial conditions sampled on phase-space
// spheres, reference integration, Gaussian observation noise, soft-edged
// disc renderings and an on-disk layout described by manifest.json.
//
// Layout under the output directory:
//   manifest.json
//   {train,test}/states_clean.f64   trajectory-major, state-major, [q..., p...]
//   {train,test}/states_noisy.f64   same shape, little-endian IEEE-754 doubles
//   {train,test}/frames/traj{i:06}/step{t:03}.ppm
// A `.incomplete` marker exists while writing and is removed on success.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hamflow/core.hpp"
#include "hamflow/integrators.hpp"
#include "hamflow/io.hpp"
#include "hamflow/systems.hpp"

namespace hamflow {

inline constexpr const char* kGeneratorVersion = "hamflow-datagen 1.0";
inline constexpr int kDatasetFormatVersion = 1;

// ---------------------------------------------------------------------------
// Systems

enum class SystemKind { mass_spring, pendulum, two_body, three_body };

inline const char* to_string(SystemKind k) {
  switch (k) {
    case SystemKind::mass_spring: return "mass_spring";
    case SystemKind::pendulum: return "pendulum";
    case SystemKind::two_body: return "two_body";
    case SystemKind::three_body: return "three_body";
  }
  return "?";
}

inline SystemKind parse_system(const std::string& s) {
  if (s == "mass_spring") return SystemKind::mass_spring;
  if (s == "pendulum") return SystemKind::pendulum;
  if (s == "two_body") return SystemKind::two_body;
  if (s == "three_body") return SystemKind::three_body;
  throw std::invalid_argument("unknown system '" + s + "' (expected mass_spring, pendulum, two_body, three_body)");
}

/// Softening used for generated n-body data; the bare systems default to 0.
inline constexpr double kDatasetSoftening = 1e-2;

struct SystemSpec {
  SystemKind kind = SystemKind::mass_spring;
  systems::MassSpringParams mass_spring;
  systems::PendulumParams pendulum;
  systems::NBodyParams nbody;

  static SystemSpec defaults(SystemKind kind) {
    SystemSpec s;
    s.kind = kind;
    if (kind == SystemKind::two_body) s.nbody = systems::NBodyParams::uniform(2, 1.0, 1.0, kDatasetSoftening);
    if (kind == SystemKind::three_body) s.nbody = systems::NBodyParams::uniform(3, 1.0, 1.0, kDatasetSoftening);
    return s;
  }

  bool is_nbody() const { return kind == SystemKind::two_body || kind == SystemKind::three_body; }
  int n_bodies() const { return is_nbody() ? nbody.n_bodies : 1; }
  std::size_t dim() const { return is_nbody() ? 2 * static_cast<std::size_t>(nbody.n_bodies) : 1; }

  AnyEnergy energy() const {
    switch (kind) {
      case SystemKind::mass_spring: return systems::MassSpring(mass_spring);
      case SystemKind::pendulum: return systems::Pendulum(pendulum);
      default: return systems::NBody(nbody);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["name"] = to_string(kind);
    switch (kind) {
      case SystemKind::mass_spring: j["k"] = mass_spring.k, j["m"] = mass_spring.m; break;
      case SystemKind::pendulum: j["m"] = pendulum.m, j["g"] = pendulum.g, j["l"] = pendulum.l; break;
      default:
        j["n_bodies"] = nbody.n_bodies;
        j["masses"] = nbody.masses;
        j["g"] = nbody.g;
        j["softening"] = nbody.softening;
    }
    return j;
  }

  static SystemSpec from_json(const nlohmann::json& j) {
    SystemSpec s = defaults(parse_system(j.at("name").get<std::string>()));
    switch (s.kind) {
      case SystemKind::mass_spring:
        s.mass_spring.k = j.value("k", s.mass_spring.k);
        s.mass_spring.m = j.value("m", s.mass_spring.m);
        break;
      case SystemKind::pendulum:
        s.pendulum.m = j.value("m", s.pendulum.m);
        s.pendulum.g = j.value("g", s.pendulum.g);
        s.pendulum.l = j.value("l", s.pendulum.l);
        break;
      default:
        s.nbody.n_bodies = j.value("n_bodies", s.nbody.n_bodies);
        s.nbody.masses = j.value("masses", s.nbody.masses);
        s.nbody.g = j.value("g", s.nbody.g);
        s.nbody.softening = j.value("softening", s.nbody.softening);
    }
    return s;
  }
};

inline std::array<double, 2> default_radius_range(SystemKind k) {
  switch (k) {
    case SystemKind::mass_spring: return {0.1, 1.0};
    case SystemKind::pendulum: return {1.3, 2.3};
    case SystemKind::two_body: return {0.5, 1.5};
    case SystemKind::three_body: return {0.9, 1.2};
  }
  return {0.1, 1.0};
}

inline double default_noise_std(SystemKind k) {
  switch (k) {
    case SystemKind::two_body: return 0.05;
    case SystemKind::three_body: return 0.2;
    default: return 0.1;
  }
}

// ---------------------------------------------------------------------------
// Specs

struct RenderSpec {
  int image_size = 64;
  double radius_px = 5.0;
  double blur_px = 1.25;
  std::vector<std::array<std::uint8_t, 3>> colors = {{230, 60, 60}, {60, 200, 80}, {70, 110, 240}};
  double scale = 64.0 / 3.0;  // pixels per world unit
  double offset_x = 32.5;     // pixel coordinate of world x = 0 (pixel centers at i + 0.5)
  double offset_y = 32.5;

  void validate() const {
    if (image_size < 1 || !(radius_px > 0.0) || !(blur_px > 0.0) || !(scale > 0.0) || colors.empty())
      throw std::invalid_argument("RenderSpec: invalid parameters");
  }
  double pixel_width() const { return 1.0 / scale; }
};

/// Frame geometry per system: the world window [-extent, extent] spans the
/// image, and the world origin sits at the center of pixel (size/2, size/2).
inline RenderSpec default_render_spec(SystemKind k, int image_size = 64) {
  RenderSpec r;
  r.image_size = image_size;
  const double extent = (k == SystemKind::two_body || k == SystemKind::three_body) ? 2.0 : 1.5;
  r.scale = image_size / (2.0 * extent);
  r.offset_x = r.offset_y = image_size / 2 + 0.5;
  const bool single = k == SystemKind::mass_spring || k == SystemKind::pendulum;
  r.radius_px = image_size * (single ? 0.08 : 0.06);
  r.blur_px = r.radius_px * 0.25;
  return r;
}

struct DatasetSpec {
  SystemSpec system;
  int n_train = 1000;
  int n_test = 200;
  int n_steps = 30;
  double dt = 0.125;
  std::array<double, 2> radius_range = {0.1, 1.0};
  double noise_std = 0.1;
  int image_size = 64;
  int channels = 3;
  std::uint64_t seed = 0;
  bool render_frames = true;
  int substeps = 100;
  int max_substeps = 12800;  // n-body only: substeps double up to this cap

  static DatasetSpec defaults(SystemKind k) {
    DatasetSpec s;
    s.system = SystemSpec::defaults(k);
    s.radius_range = default_radius_range(k);
    s.noise_std = default_noise_std(k);
    return s;
  }

  void validate() const {
    if (!(radius_range[0] <= radius_range[1]) || radius_range[0] < 0.0)
      throw std::invalid_argument("DatasetSpec: need 0 <= radius lo <= hi");
    if (n_steps < 1) throw std::invalid_argument("DatasetSpec: n_steps must be >= 1");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("DatasetSpec: noise_std must be >= 0");
    if (n_train < 0 || n_test < 0) throw std::invalid_argument("DatasetSpec: counts must be >= 0");
    if (dt == 0.0 || !std::isfinite(dt)) throw std::invalid_argument("DatasetSpec: dt must be finite and non-zero");
    if (image_size < 1 || channels != 3) throw std::invalid_argument("DatasetSpec: image_size >= 1, channels == 3");
    if (substeps < 1) throw std::invalid_argument("DatasetSpec: substeps must be >= 1");
    if (max_substeps < substeps) throw std::invalid_argument("DatasetSpec: max_substeps must be >= substeps");
  }

  nlohmann::json to_json() const {
    return {{"system", system.to_json()},
            {"n_train", n_train},
            {"n_test", n_test},
            {"n_steps", n_steps},
            {"dt", dt},
            {"radius_range", radius_range},
            {"noise_std", noise_std},
            {"image_size", image_size},
            {"channels", channels},
            {"seed", seed},
            {"render_frames", render_frames},
            {"substeps", substeps},
            {"max_substeps", max_substeps}};
  }

  static DatasetSpec from_json(const nlohmann::json& j) {
    DatasetSpec s = defaults(parse_system(j.at("system").at("name").get<std::string>()));
    s.system = SystemSpec::from_json(j.at("system"));
    s.n_train = j.value("n_train", s.n_train);
    s.n_test = j.value("n_test", s.n_test);
    s.n_steps = j.value("n_steps", s.n_steps);
    s.dt = j.value("dt", s.dt);
    s.radius_range = j.value("radius_range", s.radius_range);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.image_size = j.value("image_size", s.image_size);
    s.channels = j.value("channels", s.channels);
    s.seed = j.value("seed", s.seed);
    s.render_frames = j.value("render_frames", s.render_frames);
    s.substeps = j.value("substeps", s.substeps);
    s.max_substeps = j.value("max_substeps", std::max(s.max_substeps, s.substeps));
    return s;
  }
};

// ---------------------------------------------------------------------------
// Sampling and simulation

/// r ~ U(lo, hi), then a uniformly random point on the radius-r sphere of the
/// sampling space. One-dimensional systems: (q, p) on a circle. n-body: the
/// full (q, p) vector, after moving the center of mass to the origin and
/// removing the total momentum.
inline PhaseState sample_initial_state(const SystemSpec& sys, std::array<double, 2> radius_range, RngStream& rng) {
  if (!(radius_range[0] <= radius_range[1])) throw std::invalid_argument("sample_initial_state: lo > hi");
  const double r = radius_range[0] + (radius_range[1] - radius_range[0]) * rng.uniform();
  if (!sys.is_nbody()) {
    const double th = 2.0 * std::numbers::pi * rng.uniform();
    return PhaseState({r * std::cos(th)}, {r * std::sin(th)});
  }
  const int n = sys.nbody.n_bodies;
  const auto& m = sys.nbody.masses;
  double total_mass = 0.0;
  for (double mi : m) total_mass += mi;
  for (int attempt = 0; attempt < 100; ++attempt) {
    PhaseState s(sample_gaussian(rng, 2 * n, 0.0, 1.0), sample_gaussian(rng, 2 * n, 0.0, 1.0));
    for (int c = 0; c < 2; ++c) {
      double com = 0.0, mom = 0.0;
      for (int i = 0; i < n; ++i) {
        com += m[i] * s.q[2 * i + c];
        mom += s.p[2 * i + c];
      }
      com /= total_mass;
      for (int i = 0; i < n; ++i) {
        s.q[2 * i + c] -= com;
        s.p[2 * i + c] -= m[i] / total_mass * mom;
      }
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < s.dim(); ++k) norm += s.q[k] * s.q[k] + s.p[k] * s.p[k];
    norm = std::sqrt(norm);
    if (norm < 1e-12) continue;
    for (std::size_t k = 0; k < s.dim(); ++k) {
      s.q[k] *= r / norm;
      s.p[k] *= r / norm;
    }
    return s;
  }
  throw NumericalError("sample_initial_state: degenerate n-body draw");
}

/// Reference-quality trajectory: RK4 with `substeps` sub-steps per dt.
inline Trajectory generate_trajectory(const SystemSpec& sys, const PhaseState& s0, int n_steps, double dt,
                                      int substeps = 100) {
  if (s0.dim() != sys.dim()) throw ShapeError("generate_trajectory: state dimension does not match system");
  return reference_rollout(sys.energy(), s0, dt, n_steps, substeps);
}

inline Trajectory add_observation_noise(const Trajectory& traj, double noise_std, RngStream& rng) {
  if (!(noise_std >= 0.0)) throw std::invalid_argument("add_observation_noise: noise_std must be >= 0");
  Trajectory out = traj;
  if (noise_std == 0.0) return out;
  for (auto& s : out.states) {
    const Vec e = sample_gaussian(rng, 2 * s.dim(), 0.0, noise_std);
    for (std::size_t k = 0; k < s.dim(); ++k) {
      s.q[k] += e[k];
      s.p[k] += e[s.dim() + k];
    }
  }
  return out;
}

inline double relative_energy_drift(const AnyEnergy& h, const Trajectory& traj) {
  const double e0 = h.energy(traj.states.front());
  double worst = 0.0;
  for (const auto& s : traj.states) worst = std::max(worst, std::abs(h.energy(s) - e0));
  return worst / std::max(std::abs(e0), 1e-300);
}

// ---------------------------------------------------------------------------
// Rendering

/// World-space (x, y) of each rendered body for configuration q.
inline std::vector<std::array<double, 2>> body_positions(const SystemSpec& sys, std::span<const double> q) {
  switch (sys.kind) {
    case SystemKind::mass_spring: return {{q[0], 0.0}};
    case SystemKind::pendulum: return {{sys.pendulum.l * std::sin(q[0]), -sys.pendulum.l * std::cos(q[0])}};
    default: {
      std::vector<std::array<double, 2>> out;
      for (int i = 0; i < sys.nbody.n_bodies; ++i) out.push_back({q[2 * i], q[2 * i + 1]});
      return out;
    }
  }
}

/// Each body is a disc with a logistic edge: intensity
/// 1 / (1 + exp((d - R) / blur)), normalized to 1 at the center, times the
/// body color, added on a black background and clamped. Bodies whose center
/// lies outside the frame increment `*clipped`.
inline io::Image render_frame(const RenderSpec& spec, std::span<const std::array<double, 2>> bodies,
                              int* clipped = nullptr) {
  spec.validate();
  const int n = spec.image_size;
  io::Image img(n, n, 3);
  std::vector<double> acc(static_cast<std::size_t>(n) * n * 3, 0.0);
  const double peak = 1.0 / (1.0 + std::exp(-spec.radius_px / spec.blur_px));
  for (std::size_t b = 0; b < bodies.size(); ++b) {
    if (!std::isfinite(bodies[b][0]) || !std::isfinite(bodies[b][1]))
      throw NumericalError("render_frame: non-finite body position");
    const double cx = spec.offset_x + spec.scale * bodies[b][0];
    const double cy = spec.offset_y - spec.scale * bodies[b][1];
    if (clipped && (cx < 0.0 || cx >= n || cy < 0.0 || cy >= n)) ++*clipped;
    const auto& color = spec.colors[b % spec.colors.size()];
    const double reach = spec.radius_px + 40.0 * spec.blur_px;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int x1 = std::min(n - 1, static_cast<int>(std::ceil(cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(n - 1, static_cast<int>(std::ceil(cy + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        const double w = 1.0 / (1.0 + std::exp((d - spec.radius_px) / spec.blur_px)) / peak;
        for (int c = 0; c < 3; ++c) acc[(static_cast<std::size_t>(y) * n + x) * 3 + c] += w * color[c];
      }
  }
  for (std::size_t i = 0; i < acc.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(acc[i], 0.0, 255.0)));
  return img;
}

// ---------------------------------------------------------------------------
// Statistics

/// Kolmogorov-Smirnov statistic of `samples` against U(lo, hi).
inline double ks_statistic_uniform(std::vector<double> samples, double lo, double hi) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic_uniform: no samples");
  if (!(hi > lo)) throw std::invalid_argument("ks_statistic_uniform: need hi > lo");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = std::clamp((samples[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

/// Asymptotic one-sample KS critical value sqrt(-ln(alpha / 2) / 2) / sqrt(n).
inline double ks_critical_value(std::size_t n, double alpha) {
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Dataset generation and IO

struct SplitData {
  std::vector<Trajectory> clean;
  std::vector<Trajectory> noisy;
  std::vector<double> radii;  // sampled radius per trajectory
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t t_count = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  for (std::size_t t = 0; t < t_count; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += t_count) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline constexpr std::uint64_t kTrainKey = 0x747261696e;
inline constexpr std::uint64_t kTestKey = 0x74657374;

/// Integrates with spec.substeps, doubling up to spec.max_substeps until the
/// relative energy drift is below 1e-5. Empty when no budget suffices.
inline Trajectory regular_nbody_trajectory(const DatasetSpec& spec, const AnyEnergy& h, const PhaseState& s0) {
  for (int sub = spec.substeps; sub <= spec.max_substeps; sub *= 2) {
    try {
      Trajectory tr = generate_trajectory(spec.system, s0, spec.n_steps, spec.dt, sub);
      if (relative_energy_drift(h, tr) < 1e-5) return tr;
    } catch (const NumericalError&) {
    }
  }
  return {};
}

}  // namespace detail

/// Generates one split. Trajectory i draws from rng(seed).fork(split).fork(i),
/// so results do not depend on `threads`. n-body draws that cannot be
/// integrated to a relative energy drift below 1e-5 within the substep
/// budget are redrawn from the same stream.
inline SplitData generate_split(const DatasetSpec& spec, bool train, int threads = 1) {
  spec.validate();
  const int count = train ? spec.n_train : spec.n_test;
  const RngStream split_rng = RngStream(spec.seed).fork(train ? detail::kTrainKey : detail::kTestKey);
  const AnyEnergy h = spec.system.energy();
  SplitData out;
  out.clean.resize(static_cast<std::size_t>(count));
  out.noisy.resize(static_cast<std::size_t>(count));
  out.radii.resize(static_cast<std::size_t>(count));
  detail::parallel_for(static_cast<std::size_t>(count), threads, [&](std::size_t i) {
    RngStream rng = split_rng.fork(i);
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000) throw NumericalError("generate_split: could not draw a regular trajectory", attempt);
      const PhaseState s0 = sample_initial_state(spec.system, spec.radius_range, rng);
      Trajectory clean;
      if (!spec.system.is_nbody()) {
        clean = generate_trajectory(spec.system, s0, spec.n_steps, spec.dt, spec.substeps);
      } else {
        clean = detail::regular_nbody_trajectory(spec, h, s0);
        if (clean.states.empty()) continue;
      }
      double r2 = 0.0;
      for (std::size_t k = 0; k < s0.dim(); ++k) r2 += s0.q[k] * s0.q[k] + s0.p[k] * s0.p[k];
      out.radii[i] = std::sqrt(r2);
      out.noisy[i] = add_observation_noise(clean, spec.noise_std, rng);
      out.clean[i] = std::move(clean);
      break;
    }
  });
  return out;
}

inline std::vector<std::uint8_t> encode_states(const std::vector<Trajectory>& trajs) {
  std::vector<std::uint8_t> bytes;
  for (const auto& tr : trajs)
    for (const auto& s : tr.states) {
      for (double v : s.q) io::append_f64_le(bytes, v);
      for (double v : s.p) io::append_f64_le(bytes, v);
    }
  return bytes;
}

inline std::vector<Trajectory> decode_states(const std::vector<std::uint8_t>& bytes, std::size_t n_traj,
                                             std::size_t n_states, std::size_t dim, double dt) {
  const std::size_t expect = n_traj * n_states * 2 * dim * 8;
  if (bytes.size() != expect)
    throw IoError("state file has " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(expect));
  std::vector<Trajectory> out(n_traj);
  const std::uint8_t* p = bytes.data();
  for (auto& tr : out) {
    tr.dt = dt;
    tr.integrator = IntegratorId::reference;
    for (std::size_t t = 0; t < n_states; ++t) {
      PhaseState s{Vec(dim), Vec(dim)};
      for (double& v : s.q) v = io::load_f64_le(p), p += 8;
      for (double& v : s.p) v = io::load_f64_le(p), p += 8;
      tr.states.push_back(std::move(s));
    }
  }
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json make_manifest(const DatasetSpec& spec) {
  const std::size_t dim = spec.system.dim();
  return {{"format_version", kDatasetFormatVersion},
          {"generator", kGeneratorVersion},
          {"system", to_string(spec.system.kind)},
          {"system_params", spec.system.to_json()},
          {"counts", {{"train", spec.n_train}, {"test", spec.n_test}}},
          {"n_steps", spec.n_steps},
          {"dt", spec.dt},
          {"noise_std", spec.noise_std},
          {"image_size", spec.image_size},
          {"channels", spec.channels},
          {"radius_range", spec.radius_range},
          {"seed", spec.seed},
          {"substeps", spec.substeps},
          {"frames", spec.render_frames},
          {"state_layout",
           {{"dtype", "float64-le"},
            {"shape", {"n_trajectories", spec.n_steps + 1, 2 * dim}},
            {"order", "trajectory, state, [q_1..q_n, p_1..p_n]"},
            {"n", dim}}},
          {"spec", spec.to_json()},
          {"created_at", utc_timestamp()}};
}

/// Writes the dataset and returns its manifest.
inline nlohmann::json write_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir, int threads = 1) {
  spec.validate();
  io::ensure_dir(out_dir);
  const auto marker = out_dir / ".incomplete";
  io::write_text(marker, "dataset generation in progress\n");
  const RenderSpec render = default_render_spec(spec.system.kind, spec.image_size);
  for (const bool train : {true, false}) {
    const SplitData split = generate_split(spec, train, threads);
    const auto dir = out_dir / (train ? "train" : "test");
    io::ensure_dir(dir);
    io::write_bytes(dir / "states_clean.f64", encode_states(split.clean));
    io::write_bytes(dir / "states_noisy.f64", encode_states(split.noisy));
    if (!spec.render_frames) continue;
    for (std::size_t i = 0; i < split.noisy.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "traj%06zu", i);
      const auto tdir = dir / "frames" / name;
      io::ensure_dir(tdir);
      std::vector<io::Image> frames(split.noisy[i].size());
      detail::parallel_for(frames.size(), threads, [&](std::size_t t) {
        frames[t] = render_frame(render, body_positions(spec.system, split.noisy[i].states[t].q));
      });
      for (std::size_t t = 0; t < frames.size(); ++t) {
        std::snprintf(name, sizeof name, "step%03zu.ppm", t);
        io::write_pnm(tdir / name, frames[t]);
      }
    }
  }
  const nlohmann::json manifest = make_manifest(spec);
  io::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::filesystem::remove(marker);
  return manifest;
}

struct LoadedDataset {
  nlohmann::json manifest;
  DatasetSpec spec;
  SplitData train;
  SplitData test;
};

inline LoadedDataset read_dataset(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / ".incomplete")) throw IoError("dataset at " + dir.string() + " is incomplete");
  LoadedDataset ds;
  try {
    ds.manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    if (ds.manifest.at("format_version").get<int>() != kDatasetFormatVersion)
      throw IoError("unsupported dataset format version");
    ds.spec = DatasetSpec::from_json(ds.manifest.at("spec"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad manifest: ") + e.what());
  }
  const std::size_t states = static_cast<std::size_t>(ds.spec.n_steps) + 1;
  const std::size_t dim = ds.spec.system.dim();
  const auto load = [&](const char* split, int count, SplitData& out) {
    const auto d = dir / split;
    out.clean = decode_states(io::read_bytes(d / "states_clean.f64"), count, states, dim, ds.spec.dt);
    out.noisy = decode_states(io::read_bytes(d / "states_noisy.f64"), count, states, dim, ds.spec.dt);
  };
  load("train", ds.spec.n_train, ds.train);
  load("test", ds.spec.n_test, ds.test);
  return ds;
}

}  // namespace hamflow
