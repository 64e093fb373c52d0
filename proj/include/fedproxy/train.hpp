#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fedproxy/errors.hpp"
#include "fedproxy/model.hpp"
#include "fedproxy/tasks.hpp"

namespace fedproxy {

// Adds a regularizer gradient (PCR, FedProx, ...) into the accumulated task
// gradient. Null means pure task loss.
using ExtraGrad = std::function<void(const FlatParams& current, FlatParams& grad_accum)>;

struct TrainResult {
  FlatParams params;
  std::vector<double> loss_trajectory;  // batch task loss before each step
};

// Deterministic Fisher-Yates row shuffle; used by the round orchestrator so
// epochs see fresh batch compositions.
inline Batch shuffle_rows(const Batch& data, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "row-shuffle"));
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
  Batch out;
  out.inputs = Mat(n, data.inputs.cols);
  out.targets = Mat(n, data.targets.cols);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t c = 0; c < data.inputs.cols; ++c)
      out.inputs.at(s, c) = data.inputs.at(order[s], c);
    for (std::size_t c = 0; c < data.targets.cols; ++c)
      out.targets.at(s, c) = data.targets.at(order[s], c);
  }
  return out;
}

inline Batch slice_batch(const Batch& data, std::size_t begin, std::size_t count) {
  Batch b;
  b.inputs = Mat(count, data.inputs.cols);
  b.targets = Mat(count, data.targets.cols);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t src = begin + s;
    for (std::size_t c = 0; c < data.inputs.cols; ++c)
      b.inputs.at(s, c) = data.inputs.at(src, c);
    for (std::size_t c = 0; c < data.targets.cols; ++c)
      b.targets.at(s, c) = data.targets.at(src, c);
  }
  return b;
}

// Plain SGD over a fixed local dataset, cycling sequential minibatches.
// Deterministic: the trajectory is a pure function of (model params,
// dataset, steps, lr, batch_size). Throws DivergenceError naming the step
// if the loss stops being finite.
inline TrainResult local_sgd_on(ResidualStack& model, const Batch& data, TaskKind kind,
                                long steps, double lr, std::size_t batch_size,
                                const ExtraGrad& extra = nullptr) {
  if (lr <= 0.0) throw ConfigError("local_sgd: lr must be > 0");
  if (steps < 0) throw ConfigError("local_sgd: steps must be >= 0");
  if (batch_size == 0) throw ConfigError("local_sgd: batch_size must be >= 1");
  const std::size_t n = data.size();
  const std::size_t nbatches = (n + batch_size - 1) / batch_size;

  TrainResult res;
  res.params = model.flatten();
  res.loss_trajectory.reserve(static_cast<std::size_t>(steps));

  for (long step = 0; step < steps; ++step) {
    const std::size_t bi = static_cast<std::size_t>(step) % nbatches;
    const std::size_t begin = bi * batch_size;
    const std::size_t count = std::min(batch_size, n - begin);
    Batch batch = slice_batch(data, begin, count);

    const double loss = task_loss(model, batch, kind);
    if (!std::isfinite(loss))
      throw DivergenceError("local_sgd: training diverged (non-finite loss) at step " +
                                std::to_string(step),
                            step);
    res.loss_trajectory.push_back(loss);

    FlatParams g = grad(model, batch, kind);
    if (extra) extra(res.params, g);
    for (std::size_t i = 0; i < res.params.dim(); ++i) res.params[i] -= lr * g[i];
    model.load(res.params);
  }
  return res;
}

// Convenience wrapper drawing the client's fixed dataset from its TaskSpec.
inline TrainResult local_sgd(ResidualStack& model, const TaskSpec& task, long steps,
                             double lr, std::size_t batch_size,
                             const ExtraGrad& extra = nullptr) {
  const Batch data = train_set(task);
  return local_sgd_on(model, data, task.kind, steps, lr, batch_size, extra);
}

}  // namespace fedproxy
