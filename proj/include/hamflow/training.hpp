#pragma once

// Data-parallel loss/gradient evaluation over reusable tapes.
//
// Each worker owns one tape holding a copy of the parameters as input leaves
// and a graph for its slice of the minibatch. Per step the parameters and
// data are rebound, the tape re-evaluated and differentiated, and gradients
// reduced in worker order.

#include <cmath>
#include <exception>
#include <memory>
#include <thread>
#include <vector>

#include "hamflow/diffgraph.hpp"
#include "hamflow/models.hpp"

namespace hamflow {

struct GraphWorker {
  std::unique_ptr<ad::Tape> tape = std::make_unique<ad::Tape>();
  std::vector<ad::Var> params;
  ad::Var loss;
  std::vector<ad::Var> inputs;  // data placeholders, layout owned by the trainer
  std::vector<Vec> grads;
};

/// Splits `batch` examples into contiguous slices, one per worker.
inline std::vector<std::size_t> partition_batch(std::size_t batch, std::size_t workers) {
  std::vector<std::size_t> sizes(workers, batch / workers);
  for (std::size_t w = 0; w < batch % workers; ++w) ++sizes[w];
  return sizes;
}

/// Runs `bind_data(worker_index, worker)`, forward and backward on every
/// worker and sums gradients into `grads` (shaped like `params`). Returns
/// the summed loss.
template <class BindData>
double evaluate_workers(std::vector<GraphWorker>& workers, const ParamList& params, BindData&& bind_data,
                        int threads, std::vector<Vec>& grads) {
  std::vector<double> losses(workers.size(), 0.0);
  std::vector<std::exception_ptr> errors(workers.size());
  const auto run = [&](std::size_t w) {
    try {
      GraphWorker& wk = workers[w];
      rebind_params(*wk.tape, wk.params, params);
      bind_data(w, wk);
      wk.tape->forward();
      wk.tape->backward(wk.loss);
      losses[w] = wk.tape->scalar_value(wk.loss);
      wk.grads.resize(wk.params.size());
      for (std::size_t i = 0; i < wk.params.size(); ++i) {
        const auto a = wk.tape->adjoint(wk.params[i]);
        wk.grads[i].assign(a.begin(), a.end());
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads <= 1 || workers.size() <= 1) {
    for (std::size_t w = 0; w < workers.size(); ++w) run(w);
  } else {
    std::vector<std::thread> pool;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(threads), workers.size());
    for (std::size_t t = 0; t < n; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t w = t; w < workers.size(); w += n) run(w);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i]->size(), 0.0);
  double total = 0.0;
  for (std::size_t w = 0; w < workers.size(); ++w) {
    total += losses[w];
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t k = 0; k < grads[i].size(); ++k) grads[i][k] += workers[w].grads[i][k];
  }
  return total;
}

/// Cosine decay from lr to lr * final_fraction over `total` steps.
inline double cosine_lr(double lr, double final_fraction, long step, long total) {
  if (total <= 0) return lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return lr * (final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

/// Deep copy of parameter values (for last-good snapshots).
inline std::vector<Vec> snapshot(const ParamList& params) {
  std::vector<Vec> out;
  out.reserve(params.size());
  for (const Tensor* t : params) out.push_back(t->data);
  return out;
}

inline void restore(const ParamList& params, const std::vector<Vec>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = values[i];
}

}  // namespace hamflow
