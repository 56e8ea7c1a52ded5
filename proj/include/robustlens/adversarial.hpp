#pragma once

#include <span>

#include <json.hpp>

#include "robustlens/training.hpp"

namespace robustlens {

struct AttackConfig {
  double epsilon = 0.02;
  double clip_lo = 0.0;
  double clip_hi = 1.0;

  /// Throws ConfigError unless 0 <= epsilon <= 1 and clip_lo < clip_hi.
  void validate() const;
};

nlohmann::json to_json(const AttackConfig& c);
AttackConfig attack_from_json(const nlohmann::json& j);

struct PerturbedBatch {
  Tensor<float> images;        // x_adv
  Tensor<float> perturbation;  // x_adv - x as applied (after clipping)
  std::vector<int> labels;
};

/// Input gradient of the mean cross-entropy; parameters are read-only.
Tensor<float> input_gradient(const Model& model, const Tensor<float>& images, std::span<const int> labels);

/// x_adv = clip(x + epsilon * sign(grad_x J), lo, hi) with sign(0) = 0.
/// |x_adv - x| <= epsilon holds exactly in real arithmetic on the stored
/// floats. The model is never modified.
PerturbedBatch fgsm(const Model& model, const Tensor<float>& images, std::span<const int> labels,
                    const AttackConfig& config);

/// Perturbs the batch against the current parameters, then takes an ordinary
/// training step on the perturbed batch. Returns the adversarial loss.
float adversarial_train_step(Model& model, const Tensor<float>& images, std::span<const int> labels,
                             AdamState& optimizer, const AttackConfig& config);

/// Every image of the split replaced by its FGSM twin against `model`, then
/// evaluated as in evaluate().
Evaluation evaluate_under_attack(const Model& model, const Dataset& dataset, Split split,
                                 const AttackConfig& config, std::size_t batch_size = 32,
                                 std::size_t positive_class = kCovid);

}  // namespace robustlens
