#pragma once

// Phase-space value types, the energy-function contract, error types and the
// counter-based random stream shared by the rest of the library.

#include <array>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hamflow {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors

/// Dimension or shape disagreement between arguments.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or hit a singularity.
/// `step()` is the rollout / training step at which it happened, or -1.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, std::ptrdiff_t step = -1)
      : std::runtime_error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what),
        step_(step) {}
  std::ptrdiff_t step() const noexcept { return step_; }

 private:
  std::ptrdiff_t step_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// PhaseState

struct PhaseState {
  Vec q;
  Vec p;

  PhaseState() = default;
  PhaseState(Vec q_, Vec p_) : q(std::move(q_)), p(std::move(p_)) {}

  std::size_t dim() const noexcept { return q.size(); }

  bool valid() const { return q.size() == p.size() && all_finite(q) && all_finite(p); }

  void validate() const {
    if (q.size() != p.size())
      throw ShapeError("PhaseState: len(q)=" + std::to_string(q.size()) +
                       " != len(p)=" + std::to_string(p.size()));
    if (!all_finite(q) || !all_finite(p)) throw NumericalError("PhaseState: non-finite entry");
  }

  friend bool operator==(const PhaseState&, const PhaseState&) = default;
};

/// [q || p], length 2n.
inline Vec state_concat(const PhaseState& s) {
  Vec out;
  out.reserve(s.q.size() + s.p.size());
  out.insert(out.end(), s.q.begin(), s.q.end());
  out.insert(out.end(), s.p.begin(), s.p.end());
  return out;
}

inline PhaseState state_split(std::span<const double> x) {
  if (x.size() % 2 != 0) throw ShapeError("state_split: odd length " + std::to_string(x.size()));
  const std::size_t n = x.size() / 2;
  return PhaseState(Vec(x.begin(), x.begin() + n), Vec(x.begin() + n, x.end()));
}

inline double max_abs_diff(const PhaseState& a, const PhaseState& b) {
  if (a.dim() != b.dim()) throw ShapeError("max_abs_diff: dimension mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    m = std::max(m, std::abs(a.q[i] - b.q[i]));
    m = std::max(m, std::abs(a.p[i] - b.p[i]));
  }
  return m;
}

// ---------------------------------------------------------------------------
// EnergyFunction

/// Anything that can act as a Hamiltonian H(q, p): scalar energy plus its
/// partial gradients. When `is_separable()` holds, H = T(p) + V(q), so
/// grad_q depends on q only and grad_p on p only.
template <class H>
concept EnergyFunction = requires(const H& h, const PhaseState& s) {
  { h.energy(s) } -> std::convertible_to<double>;
  { h.grad_q(s) } -> std::convertible_to<Vec>;
  { h.grad_p(s) } -> std::convertible_to<Vec>;
  { h.is_separable() } -> std::convertible_to<bool>;
  { h.dim() } -> std::convertible_to<std::size_t>;
};

/// Type-erased EnergyFunction for runtime dispatch (CLI, registries).
class AnyEnergy {
 public:
  AnyEnergy() = default;

  template <EnergyFunction H>
    requires(!std::same_as<std::remove_cvref_t<H>, AnyEnergy>)
  AnyEnergy(H h) : impl_(std::make_shared<Model<H>>(std::move(h))) {}

  double energy(const PhaseState& s) const { return impl_->energy(s); }
  Vec grad_q(const PhaseState& s) const { return impl_->grad_q(s); }
  Vec grad_p(const PhaseState& s) const { return impl_->grad_p(s); }
  bool is_separable() const { return impl_->is_separable(); }
  std::size_t dim() const { return impl_->dim(); }
  explicit operator bool() const noexcept { return static_cast<bool>(impl_); }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual double energy(const PhaseState&) const = 0;
    virtual Vec grad_q(const PhaseState&) const = 0;
    virtual Vec grad_p(const PhaseState&) const = 0;
    virtual bool is_separable() const = 0;
    virtual std::size_t dim() const = 0;
  };
  template <class H>
  struct Model final : Concept {
    explicit Model(H h) : h_(std::move(h)) {}
    double energy(const PhaseState& s) const override { return h_.energy(s); }
    Vec grad_q(const PhaseState& s) const override { return h_.grad_q(s); }
    Vec grad_p(const PhaseState& s) const override { return h_.grad_p(s); }
    bool is_separable() const override { return h_.is_separable(); }
    std::size_t dim() const override { return h_.dim(); }
    H h_;
  };
  std::shared_ptr<const Concept> impl_;
};

static_assert(EnergyFunction<AnyEnergy>);

/// H + c. Used to check gauge invariance of losses and rollouts.
template <EnergyFunction H>
struct ShiftedEnergy {
  H base;
  double offset = 0.0;
  double energy(const PhaseState& s) const { return base.energy(s) + offset; }
  Vec grad_q(const PhaseState& s) const { return base.grad_q(s); }
  Vec grad_p(const PhaseState& s) const { return base.grad_p(s); }
  bool is_separable() const { return base.is_separable(); }
  std::size_t dim() const { return base.dim(); }
};

// ---------------------------------------------------------------------------
// Trajectory

enum class IntegratorId { euler, rk4, leapfrog, reference };

inline const char* to_string(IntegratorId id) {
  switch (id) {
    case IntegratorId::euler: return "euler";
    case IntegratorId::rk4: return "rk4";
    case IntegratorId::leapfrog: return "leapfrog";
    case IntegratorId::reference: return "reference";
  }
  return "?";
}

inline IntegratorId integrator_from_string(const std::string& s) {
  if (s == "euler") return IntegratorId::euler;
  if (s == "rk4") return IntegratorId::rk4;
  if (s == "leapfrog") return IntegratorId::leapfrog;
  if (s == "reference") return IntegratorId::reference;
  throw std::invalid_argument("unknown integrator '" + s + "'");
}

struct Trajectory {
  std::vector<PhaseState> states;
  double dt = 0.125;  // negative for backward time
  IntegratorId integrator = IntegratorId::leapfrog;

  std::size_t size() const noexcept { return states.size(); }
  std::size_t dim() const noexcept { return states.empty() ? 0 : states.front().dim(); }

  void validate() const {
    if (dt == 0.0) throw std::invalid_argument("Trajectory: dt must be non-zero");
    for (const auto& s : states) {
      if (s.dim() != dim()) throw ShapeError("Trajectory: inconsistent state dimension");
      s.validate();
    }
  }
};

// ---------------------------------------------------------------------------
// RngStream: Philox4x32-10 keyed by the seed, counter = (counter, stream).

namespace detail {

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    const std::uint64_t prod0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t prod1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(prod0 >> 32), lo0 = static_cast<std::uint32_t>(prod0);
    const auto hi1 = static_cast<std::uint32_t>(prod1 >> 32), lo1 = static_cast<std::uint32_t>(prod1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

// splitmix64 finalizer, for deriving child stream ids
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream. A draw is a pure function of
/// (seed, stream, counter), so forked streams give identical results no matter
/// how work items are scheduled across threads.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0, std::uint64_t stream = 0)
      : seed_(seed), counter_(counter), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }
  std::uint64_t stream() const noexcept { return stream_; }
  void reset(std::uint64_t counter = 0) noexcept { counter_ = counter; }

  /// Independent child stream for work item `key`; does not advance this stream.
  RngStream fork(std::uint64_t key) const {
    return RngStream(seed_, 0, detail::mix64(stream_ ^ detail::mix64(key + 0x5851F42D4C957F2Dull)));
  }

  /// One Philox block: 128 random bits, advances the counter by one.
  std::array<std::uint64_t, 2> next_block() {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                              static_cast<std::uint32_t>(seed_ >> 32)};
    ++counter_;
    const auto r = detail::philox4x32_10(ctr, key);
    return {(std::uint64_t{r[1]} << 32) | r[0], (std::uint64_t{r[3]} << 32) | r[2]};
  }

  std::uint64_t next_u64() { return next_block()[0]; }

  /// Uniform on [0, 1).
  double uniform() { return to_unit(next_u64()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal pair from one block (Box-Muller).
  std::array<double, 2> normal_pair() {
    const auto b = next_block();
    const double u1 = 1.0 - to_unit(b[0]);  // (0, 1]
    const double u2 = to_unit(b[1]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(th), r * std::sin(th)};
  }

  double normal() { return normal_pair()[0]; }

 private:
  static double to_unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t stream_ = 0;
};

/// `dim` i.i.d. draws from N(mean, std^2). Consumes ceil(dim/2) blocks.
inline Vec sample_gaussian(RngStream& rng, std::size_t dim, double mean, double std) {
  if (!(std >= 0.0)) throw std::invalid_argument("sample_gaussian: std must be >= 0");
  Vec out(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    const auto z = rng.normal_pair();
    out[i] = mean + std * z[0];
    if (i + 1 < dim) out[i + 1] = mean + std * z[1];
  }
  return out;
}

}  // namespace hamflow
