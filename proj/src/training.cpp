#include "robustlens/training.hpp"

namespace robustlens {

float loss_and_gradients(Model& model, const Tensor<float>& images, std::span<const int> labels) {
  for (auto& e : model.params.entries) {
    e.tensor.set_requires_grad(true);
    e.tensor.clear_grad();
  }
  Graph<float> g;
  const ForwardPass<float> pass = forward(g, model.config, model.params, g.constant_ref(images));
  const Var<float> loss = softmax_cross_entropy(pass.logits, labels);
  g.backward(loss);
  for (auto& e : model.params.entries) e.tensor.set_requires_grad(false);
  return loss.value()[0];
}

float train_step(Model& model, const Tensor<float>& images, std::span<const int> labels, AdamState& optimizer) {
  const float loss = loss_and_gradients(model, images, labels);
  adam_step(model.params, optimizer);
  for (auto& e : model.params.entries) e.tensor.clear_grad();
  return loss;
}

Evaluation evaluate(const Model& model, const Dataset& dataset, Split split, std::size_t batch_size,
                    std::size_t positive_class) {
  Evaluation ev;
  BatchIterator it(dataset, split, batch_size, std::nullopt, 0, /*shuffle=*/false);
  double total = 0.0;
  while (auto batch = it.next()) {
    Graph<float> g;
    const ForwardPass<float> pass = forward(g, model.config, model.params, g.constant_ref(batch->images));
    const Var<float> loss = softmax_cross_entropy(pass.logits, batch->labels);
    total += static_cast<double>(loss.value()[0]) * static_cast<double>(batch->labels.size());
    const std::vector<int> pred = argmax_rows(pass.logits.value());
    ev.labels.insert(ev.labels.end(), batch->labels.begin(), batch->labels.end());
    ev.predictions.insert(ev.predictions.end(), pred.begin(), pred.end());
  }
  ev.mean_loss = total / static_cast<double>(ev.labels.size());
  ev.metrics = report(confusion(ev.labels, ev.predictions, model.config.num_classes), positive_class);
  return ev;
}

double mean_loss(const Model& model, const Dataset& dataset, Split split, std::size_t batch_size) {
  return evaluate(model, dataset, split, batch_size).mean_loss;
}

}  // namespace robustlens
