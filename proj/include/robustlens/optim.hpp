#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robustlens/model.hpp"

namespace robustlens {

/// Adam moments and hyper-parameters.
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
/// Moments are allocated on the first call; later calls must pass the same
/// layout. Nothing is written if any gradient or updated value is non-finite.
void adam_step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads,
               AdamState& state);

/// Same, reading each parameter tensor's gradient buffer.
void adam_step(ModelParams<float>& params, AdamState& state);

/// Reduce-on-plateau monitor of the validation loss.
struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  double factor = 0.2;
  int patience = 2;
  double min_delta = 1e-4;
};

/// An epoch improves when val_loss < best - min_delta (a drop of exactly
/// min_delta does not count). After `patience` stale epochs the learning rate
/// is multiplied by `factor` and the counter resets. Returns true when the
/// rate was reduced.
bool plateau_update(PlateauState& state, double val_loss, double& learning_rate);

/// Early stopping with best-state tracking; improvement is strict (ties keep
/// the earlier epoch).
template <class Snapshot>
struct EarlyStopState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epoch = 0;
  int stale = 0;
  int patience = 15;
  std::size_t max_epochs = 100;
  std::optional<Snapshot> best_snapshot;
};

struct EarlyStopDecision {
  bool improved = false;
  bool halt = false;
};

template <class Snapshot>
EarlyStopDecision early_stop_update(EarlyStopState<Snapshot>& state, double val_loss, const Snapshot& snapshot) {
  if (!std::isfinite(val_loss)) throw NumericalError("early stop: non-finite validation loss");
  ++state.epoch;
  EarlyStopDecision d;
  if (val_loss < state.best) {
    state.best = val_loss;
    state.best_epoch = state.epoch;
    state.best_snapshot = snapshot;
    state.stale = 0;
    d.improved = true;
  } else {
    ++state.stale;
  }
  d.halt = state.stale >= state.patience || state.epoch >= state.max_epochs;
  return d;
}

}  // namespace robustlens
