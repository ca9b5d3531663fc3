#pragma once

// Reverse-mode differentiation over small dense expression graphs.
//
// Node values are scalars (1x1), column vectors (n x 1) or row-major matrices.
// Nodes are appended in topological order and evaluated eagerly when all
// operands are evaluated. A tape can be reused: rebind its inputs and call
// forward() to recompute every node without rebuilding the graph.
//
// backward() computes numeric adjoints. grad_as_graph() instead emits new
// nodes computing d(out)/d(wrt), so that a later backward() through a loss
// containing those nodes yields second-order derivatives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hamflow/core.hpp"

namespace hamflow::ad {

enum class Op : std::uint8_t {
  constant,
  input,
  add,
  sub,
  mul,
  neg,
  scale,
  matvec,
  matvec_t,
  outer,
  dot,
  tanh,
  softplus,
  sigmoid,
  relu,
  step,
  exp,
  log,
  square,
  sum,
  reciprocal,
};

inline const char* op_name(Op op) {
  static constexpr const char* names[] = {"constant", "input",  "add",     "sub",  "mul",      "neg",  "scale",
                                          "matvec",   "matvec_t", "outer", "dot",  "tanh",     "softplus",
                                          "sigmoid",  "relu",   "step",    "exp",  "log",      "square",
                                          "sum",      "reciprocal"};
  return names[static_cast<int>(op)];
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;
  bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  void clear() {
    nodes_.clear();
    values_.clear();
    adjoints_.clear();
    stale_ = false;
  }
  void reserve(std::size_t nodes, std::size_t scalars) {
    nodes_.reserve(nodes);
    values_.reserve(scalars);
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  // -- leaves ---------------------------------------------------------------

  Var constant(std::span<const double> v, int rows, int cols = 1) {
    check_size(v.size(), rows, cols, "constant");
    const Var out = push(Op::constant, -1, -1, rows, cols);
    std::copy(v.begin(), v.end(), values_.begin() + node(out).offset);
    node(out).evaluated = true;
    return out;
  }
  Var constant(std::span<const double> v) { return constant(v, static_cast<int>(v.size()), 1); }
  Var scalar(double x) { return constant(std::span<const double>(&x, 1), 1, 1); }
  Var filled(double x, int rows, int cols = 1) {
    const Var out = push(Op::constant, -1, -1, rows, cols);
    auto& n = node(out);
    std::fill_n(values_.begin() + n.offset, n.size(), x);
    n.evaluated = true;
    return out;
  }

  /// Unbound input placeholder; bind() before forward().
  Var input(int rows, int cols = 1) {
    const Var out = push(Op::input, -1, -1, rows, cols);
    node(out).bound = false;
    return out;
  }
  Var input(std::span<const double> v, int rows, int cols = 1) {
    check_size(v.size(), rows, cols, "input");
    const Var out = push(Op::input, -1, -1, rows, cols);
    std::copy(v.begin(), v.end(), values_.begin() + node(out).offset);
    node(out).evaluated = true;
    return out;
  }
  Var input(std::span<const double> v) { return input(v, static_cast<int>(v.size()), 1); }

  /// Rebinds an input. Values downstream are stale until forward().
  void bind(Var v, std::span<const double> value) {
    auto& n = node(v);
    if (n.op != Op::input) throw std::invalid_argument("Tape::bind: node is not an input");
    if (value.size() != n.size()) throw ShapeError("Tape::bind: size mismatch");
    std::copy(value.begin(), value.end(), values_.begin() + n.offset);
    n.bound = true;
    n.evaluated = true;
    stale_ = true;
  }

  // -- accessors ------------------------------------------------------------

  std::span<const double> value(Var v) const {
    const auto& n = node(v);
    return {values_.data() + n.offset, n.size()};
  }
  double scalar_value(Var v) const {
    const auto& n = node(v);
    if (n.size() != 1) throw ShapeError("Tape::scalar_value: node is not scalar");
    return values_[n.offset];
  }
  int rows(Var v) const { return node(v).rows; }
  int cols(Var v) const { return node(v).cols; }
  std::size_t numel(Var v) const { return node(v).size(); }
  Op op(Var v) const { return node(v).op; }

  // -- operations -----------------------------------------------------------

  Var add(Var a, Var b) { return binary_same(Op::add, a, b); }
  Var sub(Var a, Var b) { return binary_same(Op::sub, a, b); }
  Var mul(Var a, Var b) { return binary_same(Op::mul, a, b); }
  Var neg(Var a) { return unary(Op::neg, a); }

  /// s * v for a scalar node s.
  Var scale(Var s, Var v) {
    if (node(s).size() != 1) throw ShapeError("scale: first operand must be scalar");
    return make(Op::scale, s, v, node(v).rows, node(v).cols);
  }
  Var scale(double s, Var v) { return scale(scalar(s), v); }

  /// A x with A (m x n) and x (n x 1).
  Var matvec(Var A, Var x) {
    const auto &na = node(A), &nx = node(x);
    if (nx.cols != 1 || na.cols != nx.rows)
      throw ShapeError("matvec: " + shape_str(na) + " times " + shape_str(nx));
    return make(Op::matvec, A, x, na.rows, 1);
  }
  /// A^T y with A (m x n) and y (m x 1).
  Var matvec_t(Var A, Var y) {
    const auto &na = node(A), &ny = node(y);
    if (ny.cols != 1 || na.rows != ny.rows)
      throw ShapeError("matvec_t: " + shape_str(na) + "^T times " + shape_str(ny));
    return make(Op::matvec_t, A, y, na.cols, 1);
  }
  /// u v^T.
  Var outer(Var u, Var v) {
    const auto &nu = node(u), &nv = node(v);
    if (nu.cols != 1 || nv.cols != 1) throw ShapeError("outer: operands must be column vectors");
    return make(Op::outer, u, v, nu.rows, nv.rows);
  }
  Var dot(Var a, Var b) {
    if (node(a).size() != node(b).size()) throw ShapeError("dot: size mismatch");
    return make(Op::dot, a, b, 1, 1);
  }
  Var sum(Var a) { return make(Op::sum, a, Var{}, 1, 1); }

  Var tanh(Var a) { return unary(Op::tanh, a); }
  Var softplus(Var a) { return unary(Op::softplus, a); }
  Var sigmoid(Var a) { return unary(Op::sigmoid, a); }
  /// max(x, 0); its derivative is step(x), taken as 0 at x == 0.
  Var relu(Var a) { return unary(Op::relu, a); }
  /// 1 where x > 0, else 0. Zero derivative.
  Var step(Var a) { return unary(Op::step, a); }
  Var exp(Var a) { return unary(Op::exp, a); }
  Var log(Var a) { return unary(Op::log, a); }
  Var square(Var a) { return unary(Op::square, a); }
  Var reciprocal(Var a) { return unary(Op::reciprocal, a); }

  // -- evaluation -----------------------------------------------------------

  /// Re-evaluates every node in order. Throws on unbound inputs and on the
  /// first node that produces a non-finite value.
  void forward() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      if (n.op == Op::input && !n.bound)
        throw std::invalid_argument("Tape::forward: input node " + std::to_string(i) + " is unbound");
      if (n.op != Op::input && n.op != Op::constant) {
        eval(static_cast<std::int32_t>(i));
        check_finite(static_cast<std::int32_t>(i));
      }
      n.evaluated = true;
    }
    stale_ = false;
  }

  /// Numeric reverse pass from scalar `out`. Afterwards adjoint(v) holds
  /// d(out)/d(v) for every node v created before `out`.
  void backward(Var out) {
    const auto& no = node(out);
    if (no.size() != 1) throw ShapeError("backward: output must be scalar");
    if (stale_ || !no.evaluated) throw std::logic_error("backward: forward() has not been run");
    const std::size_t total = no.offset + 1;
    adjoints_.assign(total, 0.0);
    touched_.assign(static_cast<std::size_t>(out.id) + 1, 0);
    adjoints_[no.offset] = 1.0;
    touched_[out.id] = 1;
    adjoint_limit_ = out.id;
    for (std::int32_t i = out.id; i >= 0; --i)
      if (touched_[i]) backprop_node(i);
  }

  std::span<const double> adjoint(Var v) const {
    if (v.id > adjoint_limit_) throw std::logic_error("adjoint: node created after the backward output");
    const auto& n = node(v);
    return {adjoints_.data() + n.offset, n.size()};
  }

  /// Convenience: backward(out) and copy the adjoints of `wrt`.
  std::vector<Vec> gradients(Var out, std::span<const Var> wrt) {
    backward(out);
    std::vector<Vec> g;
    g.reserve(wrt.size());
    for (Var v : wrt) {
      auto a = adjoint(v);
      g.emplace_back(a.begin(), a.end());
    }
    return g;
  }

  /// Emits nodes computing d(out)/d(w) for each w in `wrt`. Only nodes that
  /// depend on some w are differentiated through; everything else (weights,
  /// biases) is treated as a constant of the derivative expression but stays
  /// connected, so backward() through the result differentiates it as well.
  std::vector<Var> grad_as_graph(Var out, std::span<const Var> wrt) {
    if (node(out).size() != 1) throw ShapeError("grad_as_graph: output must be scalar");
    const std::int32_t last = out.id;
    std::int32_t first = last;
    for (Var w : wrt) first = std::min(first, w.id);
    const std::size_t span_len = static_cast<std::size_t>(last - first + 1);
    std::vector<char> dep(span_len, 0);
    for (Var w : wrt)
      if (w.id <= last) dep[w.id - first] = 1;
    const auto depends = [&](std::int32_t id) { return id >= first && id <= last && dep[id - first]; };
    for (std::int32_t i = first; i <= last; ++i) {
      const auto& n = nodes_[i];
      if ((n.a >= 0 && depends(n.a)) || (n.b >= 0 && depends(n.b))) dep[i - first] = 1;
    }

    std::vector<std::optional<Var>> adj(span_len);
    const auto accumulate = [&](std::int32_t id, Var contrib) {
      auto& slot = adj[id - first];
      slot = slot ? add(*slot, contrib) : contrib;
    };
    if (depends(last)) adj[last - first] = scalar(1.0);

    for (std::int32_t i = last; i >= first; --i) {
      if (!adj[i - first]) continue;
      const Var g = *adj[i - first];
      const Node n = nodes_[i];  // copy: emitting nodes may reallocate
      const Var y{this, i}, a{this, n.a}, b{this, n.b};
      const bool da = n.a >= 0 && depends(n.a);
      const bool db = n.b >= 0 && depends(n.b);
      switch (n.op) {
        case Op::constant:
        case Op::input:
        case Op::step:
          break;
        case Op::add:
          if (da) accumulate(n.a, g);
          if (db) accumulate(n.b, g);
          break;
        case Op::sub:
          if (da) accumulate(n.a, g);
          if (db) accumulate(n.b, neg(g));
          break;
        case Op::mul:
          if (da) accumulate(n.a, mul(g, b));
          if (db) accumulate(n.b, mul(g, a));
          break;
        case Op::neg:
          if (da) accumulate(n.a, neg(g));
          break;
        case Op::scale:
          if (da) accumulate(n.a, dot(g, b));
          if (db) accumulate(n.b, scale(a, g));
          break;
        case Op::matvec:
          if (da) accumulate(n.a, outer(g, b));
          if (db) accumulate(n.b, matvec_t(a, g));
          break;
        case Op::matvec_t:
          if (da) accumulate(n.a, outer(b, g));
          if (db) accumulate(n.b, matvec(a, g));
          break;
        case Op::outer:
          if (da) accumulate(n.a, matvec(g, b));
          if (db) accumulate(n.b, matvec_t(g, a));
          break;
        case Op::dot:
          if (da) accumulate(n.a, scale(g, b));
          if (db) accumulate(n.b, scale(g, a));
          break;
        case Op::sum:
          if (da) accumulate(n.a, scale(g, filled(1.0, node(a).rows, node(a).cols)));
          break;
        case Op::tanh:
          if (da) accumulate(n.a, mul(g, sub(filled(1.0, n.rows, n.cols), square(y))));
          break;
        case Op::softplus:
          if (da) accumulate(n.a, mul(g, sigmoid(a)));
          break;
        case Op::sigmoid:
          if (da) accumulate(n.a, mul(g, mul(y, sub(filled(1.0, n.rows, n.cols), y))));
          break;
        case Op::relu:
          if (da) accumulate(n.a, mul(g, step(a)));
          break;
        case Op::exp:
          if (da) accumulate(n.a, mul(g, y));
          break;
        case Op::log:
          if (da) accumulate(n.a, mul(g, reciprocal(a)));
          break;
        case Op::square:
          if (da) accumulate(n.a, scale(2.0, mul(g, a)));
          break;
        case Op::reciprocal:
          if (da) accumulate(n.a, neg(mul(g, square(y))));
          break;
      }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (Var w : wrt) {
      if (w.id <= last && adj[w.id - first]) {
        result.push_back(*adj[w.id - first]);
      } else {
        result.push_back(filled(0.0, node(w).rows, node(w).cols));
      }
    }
    return result;
  }

 private:
  struct Node {
    Op op;
    bool evaluated = false;
    bool bound = true;
    std::int32_t a = -1, b = -1;
    int rows = 1, cols = 1;
    std::size_t offset = 0;
    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  };

  static std::string shape_str(const Node& n) { return "(" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + ")"; }

  static void check_size(std::size_t got, int rows, int cols, const char* who) {
    if (rows < 1 || cols < 1 || got != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
      throw ShapeError(std::string(who) + ": value size does not match shape");
  }

  Node& node(Var v) {
    check_var(v);
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    check_var(v);
    return nodes_[v.id];
  }
  void check_var(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::invalid_argument("Var does not belong to this tape");
  }

  Var push(Op op, std::int32_t a, std::int32_t b, int rows, int cols) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.rows = rows;
    n.cols = cols;
    n.offset = values_.size();
    values_.resize(values_.size() + n.size());
    nodes_.push_back(n);
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  Var make(Op op, Var a, Var b, int rows, int cols) {
    const bool ready = node(a).evaluated && (!b.valid() || node(b).evaluated);
    const Var out = push(op, a.id, b.valid() ? b.id : -1, rows, cols);
    if (ready && !stale_) {
      eval(out.id);
      check_finite(out.id);
      nodes_[out.id].evaluated = true;
    }
    return out;
  }

  Var unary(Op op, Var a) { return make(op, a, Var{}, node(a).rows, node(a).cols); }

  Var binary_same(Op op, Var a, Var b) {
    const auto &na = node(a), &nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols)
      throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + shape_str(na) + " vs " + shape_str(nb));
    return make(op, a, b, na.rows, na.cols);
  }

  void check_finite(std::int32_t i) const {
    const auto& n = nodes_[i];
    for (std::size_t k = 0; k < n.size(); ++k)
      if (!std::isfinite(values_[n.offset + k]))
        throw NumericalError(std::string("diffgraph: node ") + std::to_string(i) + " (" + op_name(n.op) +
                             ") produced a non-finite value");
  }

  void eval(std::int32_t i) {
    const Node& n = nodes_[i];
    double* y = values_.data() + n.offset;
    const double* a = n.a >= 0 ? values_.data() + nodes_[n.a].offset : nullptr;
    const double* b = n.b >= 0 ? values_.data() + nodes_[n.b].offset : nullptr;
    const std::size_t len = n.size();
    switch (n.op) {
      case Op::constant:
      case Op::input:
        return;
      case Op::add:
        for (std::size_t k = 0; k < len; ++k) y[k] = a[k] + b[k];
        return;
      case Op::sub:
        for (std::size_t k = 0; k < len; ++k) y[k] = a[k] - b[k];
        return;
      case Op::mul:
        for (std::size_t k = 0; k < len; ++k) y[k] = a[k] * b[k];
        return;
      case Op::neg:
        for (std::size_t k = 0; k < len; ++k) y[k] = -a[k];
        return;
      case Op::scale:
        for (std::size_t k = 0; k < len; ++k) y[k] = a[0] * b[k];
        return;
      case Op::matvec: {
        const int m = nodes_[n.a].rows, c = nodes_[n.a].cols;
        for (int r = 0; r < m; ++r) {
          double acc = 0.0;
          const double* row = a + static_cast<std::size_t>(r) * c;
          for (int j = 0; j < c; ++j) acc += row[j] * b[j];
          y[r] = acc;
        }
        return;
      }
      case Op::matvec_t: {
        const int m = nodes_[n.a].rows, c = nodes_[n.a].cols;
        std::fill_n(y, c, 0.0);
        for (int r = 0; r < m; ++r) {
          const double* row = a + static_cast<std::size_t>(r) * c;
          const double br = b[r];
          for (int j = 0; j < c; ++j) y[j] += row[j] * br;
        }
        return;
      }
      case Op::outer: {
        const int m = n.rows, c = n.cols;
        for (int r = 0; r < m; ++r)
          for (int j = 0; j < c; ++j) y[static_cast<std::size_t>(r) * c + j] = a[r] * b[j];
        return;
      }
      case Op::dot: {
        double acc = 0.0;
        const std::size_t la = nodes_[n.a].size();
        for (std::size_t k = 0; k < la; ++k) acc += a[k] * b[k];
        y[0] = acc;
        return;
      }
      case Op::sum: {
        double acc = 0.0;
        const std::size_t la = nodes_[n.a].size();
        for (std::size_t k = 0; k < la; ++k) acc += a[k];
        y[0] = acc;
        return;
      }
      case Op::tanh:
        for (std::size_t k = 0; k < len; ++k) y[k] = std::tanh(a[k]);
        return;
      case Op::softplus:
        for (std::size_t k = 0; k < len; ++k) y[k] = detail::softplus(a[k]);
        return;
      case Op::sigmoid:
        for (std::size_t k = 0; k < len; ++k) y[k] = detail::sigmoid(a[k]);
        return;
      case Op::relu:
        for (std::size_t k = 0; k < len; ++k) y[k] = a[k] > 0.0 ? a[k] : 0.0;
        return;
      case Op::step:
        for (std::size_t k = 0; k < len; ++k) y[k] = a[k] > 0.0 ? 1.0 : 0.0;
        return;
      case Op::exp:
        for (std::size_t k = 0; k < len; ++k) y[k] = std::exp(a[k]);
        return;
      case Op::log:
        for (std::size_t k = 0; k < len; ++k) y[k] = std::log(a[k]);
        return;
      case Op::square:
        for (std::size_t k = 0; k < len; ++k) y[k] = a[k] * a[k];
        return;
      case Op::reciprocal:
        for (std::size_t k = 0; k < len; ++k) y[k] = 1.0 / a[k];
        return;
    }
  }

  void backprop_node(std::int32_t i) {
    const Node& n = nodes_[i];
    if (n.a < 0) return;
    const double* g = adjoints_.data() + n.offset;
    const double* y = values_.data() + n.offset;
    const Node& na = nodes_[n.a];
    const double* a = values_.data() + na.offset;
    double* ga = adjoints_.data() + na.offset;
    const Node* nb = n.b >= 0 ? &nodes_[n.b] : nullptr;
    const double* b = nb ? values_.data() + nb->offset : nullptr;
    double* gb = nb ? adjoints_.data() + nb->offset : nullptr;
    touched_[n.a] = 1;
    if (nb) touched_[n.b] = 1;
    const std::size_t len = n.size();
    switch (n.op) {
      case Op::constant:
      case Op::input:
      case Op::step:
        return;
      case Op::add:
        for (std::size_t k = 0; k < len; ++k) {
          ga[k] += g[k];
          gb[k] += g[k];
        }
        return;
      case Op::sub:
        for (std::size_t k = 0; k < len; ++k) {
          ga[k] += g[k];
          gb[k] -= g[k];
        }
        return;
      case Op::mul:
        for (std::size_t k = 0; k < len; ++k) {
          ga[k] += g[k] * b[k];
          gb[k] += g[k] * a[k];
        }
        return;
      case Op::neg:
        for (std::size_t k = 0; k < len; ++k) ga[k] -= g[k];
        return;
      case Op::scale: {
        double acc = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
          acc += g[k] * b[k];
          gb[k] += a[0] * g[k];
        }
        ga[0] += acc;
        return;
      }
      case Op::matvec: {
        const int m = na.rows, c = na.cols;
        for (int r = 0; r < m; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          double* garow = ga + static_cast<std::size_t>(r) * c;
          const double* arow = a + static_cast<std::size_t>(r) * c;
          for (int j = 0; j < c; ++j) {
            garow[j] += gr * b[j];
            gb[j] += arow[j] * gr;
          }
        }
        return;
      }
      case Op::matvec_t: {
        // y_j = sum_r A_rj b_r
        const int m = na.rows, c = na.cols;
        for (int r = 0; r < m; ++r) {
          double* garow = ga + static_cast<std::size_t>(r) * c;
          const double* arow = a + static_cast<std::size_t>(r) * c;
          const double br = b[r];
          double acc = 0.0;
          for (int j = 0; j < c; ++j) {
            garow[j] += br * g[j];
            acc += arow[j] * g[j];
          }
          gb[r] += acc;
        }
        return;
      }
      case Op::outer: {
        const int m = n.rows, c = n.cols;
        for (int r = 0; r < m; ++r) {
          const double* grow = g + static_cast<std::size_t>(r) * c;
          double acc = 0.0;
          for (int j = 0; j < c; ++j) {
            acc += grow[j] * b[j];
            gb[j] += grow[j] * a[r];
          }
          ga[r] += acc;
        }
        return;
      }
      case Op::dot: {
        const std::size_t la = na.size();
        for (std::size_t k = 0; k < la; ++k) {
          ga[k] += g[0] * b[k];
          gb[k] += g[0] * a[k];
        }
        return;
      }
      case Op::sum: {
        const std::size_t la = na.size();
        for (std::size_t k = 0; k < la; ++k) ga[k] += g[0];
        return;
      }
      case Op::tanh:
        for (std::size_t k = 0; k < len; ++k) ga[k] += g[k] * (1.0 - y[k] * y[k]);
        return;
      case Op::softplus:
        for (std::size_t k = 0; k < len; ++k) ga[k] += g[k] * detail::sigmoid(a[k]);
        return;
      case Op::sigmoid:
        for (std::size_t k = 0; k < len; ++k) ga[k] += g[k] * y[k] * (1.0 - y[k]);
        return;
      case Op::relu:
        for (std::size_t k = 0; k < len; ++k)
          if (a[k] > 0.0) ga[k] += g[k];
        return;
      case Op::exp:
        for (std::size_t k = 0; k < len; ++k) ga[k] += g[k] * y[k];
        return;
      case Op::log:
        for (std::size_t k = 0; k < len; ++k) ga[k] += g[k] / a[k];
        return;
      case Op::square:
        for (std::size_t k = 0; k < len; ++k) ga[k] += 2.0 * g[k] * a[k];
        return;
      case Op::reciprocal:
        for (std::size_t k = 0; k < len; ++k) ga[k] -= g[k] * y[k] * y[k];
        return;
    }
  }

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::vector<char> touched_;
  std::int32_t adjoint_limit_ = -1;
  bool stale_ = false;
};

// -- free-function / operator sugar ------------------------------------------

namespace detail {
inline Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
  return *a.tape;
}
}  // namespace detail

inline Var operator+(Var a, Var b) { return detail::tape_of(a, b).add(a, b); }
inline Var operator-(Var a, Var b) { return detail::tape_of(a, b).sub(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }
/// Elementwise product; a scalar node times a vector node scales it.
inline Var operator*(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  if (t.numel(a) == 1 && t.numel(b) != 1) return t.scale(a, b);
  if (t.numel(b) == 1 && t.numel(a) != 1) return t.scale(b, a);
  return t.mul(a, b);
}
inline Var operator*(double c, Var v) { return v.tape->scale(c, v); }
inline Var operator*(Var v, double c) { return v.tape->scale(c, v); }

inline Var matvec(Var A, Var x) { return detail::tape_of(A, x).matvec(A, x); }
inline Var dot(Var a, Var b) { return detail::tape_of(a, b).dot(a, b); }
inline Var sum(Var a) { return a.tape->sum(a); }
inline Var square(Var a) { return a.tape->square(a); }
inline Var softplus(Var a) { return a.tape->softplus(a); }
inline Var sigmoid(Var a) { return a.tape->sigmoid(a); }
inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var relu(Var a) { return a.tape->relu(a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var log(Var a) { return a.tape->log(a); }

}  // namespace hamflow::ad
