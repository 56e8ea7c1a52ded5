#include "robustlens/optim.hpp"

namespace robustlens {

void adam_step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads,
               AdamState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (!(state.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0f);
      state.v.emplace_back(p.size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: parameter layout changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size() || state.m[k].size() != params[k].size()) {
      throw ShapeError("adam: gradient " + std::to_string(k) + " does not match its parameter");
    }
    for (const float g : grads[k]) {
      if (!std::isfinite(g)) throw NumericalError("adam: non-finite gradient in parameter " + std::to_string(k));
    }
  }

  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  std::vector<std::vector<float>> m = state.m, v = state.v, next(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    next[k].resize(params[k].size());
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k][i];
      const double mi = state.beta1 * m[k][i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[k][i] + (1.0 - state.beta2) * g * g;
      m[k][i] = static_cast<float>(mi);
      v[k][i] = static_cast<float>(vi);
      const double update = state.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + state.epsilon);
      const double value = static_cast<double>(params[k][i]) - update;
      if (!std::isfinite(value)) throw NumericalError("adam: non-finite update in parameter " + std::to_string(k));
      next[k][i] = static_cast<float>(value);
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) std::copy(next[k].begin(), next[k].end(), params[k].begin());
  state.m = std::move(m);
  state.v = std::move(v);
  state.step = t;
}

void adam_step(ModelParams<float>& params, AdamState& state) {
  std::vector<std::span<float>> p;
  std::vector<std::vector<float>> zero_grads;
  std::vector<std::span<const float>> g;
  zero_grads.reserve(params.entries.size());
  for (auto& e : params.entries) {
    p.push_back(e.tensor.data());
    if (e.tensor.has_grad()) {
      g.push_back(e.tensor.grad());
    } else {
      zero_grads.emplace_back(e.tensor.numel(), 0.0f);
      g.push_back(zero_grads.back());
    }
  }
  adam_step(p, g, state);
}

bool plateau_update(PlateauState& state, double val_loss, double& learning_rate) {
  if (!std::isfinite(val_loss)) throw NumericalError("plateau: non-finite validation loss");
  if (val_loss < state.best - state.min_delta) {
    state.best = val_loss;
    state.stale = 0;
    return false;
  }
  if (++state.stale >= state.patience) {
    learning_rate *= state.factor;
    state.stale = 0;
    return true;
  }
  return false;
}

}  // namespace robustlens
