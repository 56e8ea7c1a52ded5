#pragma once

#include <span>
#include <vector>

#include "robustlens/data.hpp"
#include "robustlens/metrics.hpp"
#include "robustlens/model.hpp"
#include "robustlens/optim.hpp"

namespace robustlens {

/// Mean cross-entropy of a batch and its parameter gradients. Gradients are
/// left in the parameter tensors' grad buffers (overwritten, not summed).
float loss_and_gradients(Model& model, const Tensor<float>& images, std::span<const int> labels);

/// Forward, backward, one Adam update. Returns the batch loss before the update.
float train_step(Model& model, const Tensor<float>& images, std::span<const int> labels, AdamState& optimizer);

struct Evaluation {
  std::vector<int> labels;
  std::vector<int> predictions;
  double mean_loss = 0.0;
  MetricsReport metrics;
};

/// Clean evaluation of a split in fixed order, no augmentation.
Evaluation evaluate(const Model& model, const Dataset& dataset, Split split, std::size_t batch_size = 32,
                    std::size_t positive_class = kCovid);

/// Mean cross-entropy over a split, no augmentation.
double mean_loss(const Model& model, const Dataset& dataset, Split split, std::size_t batch_size = 32);

}  // namespace robustlens
