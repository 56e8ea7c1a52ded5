#include "robustlens/adversarial.hpp"

#include <algorithm>
#include <cmath>

namespace robustlens {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("attack: epsilon must lie in [0, 1]");
  if (!(clip_lo < clip_hi)) throw ConfigError("attack: clip bounds must satisfy lo < hi");
}

nlohmann::json to_json(const AttackConfig& c) {
  return nlohmann::json{{"epsilon", c.epsilon}, {"clip", {c.clip_lo, c.clip_hi}}};
}

AttackConfig attack_from_json(const nlohmann::json& j) {
  AttackConfig c;
  try {
    c.epsilon = j.value("epsilon", c.epsilon);
    if (j.contains("clip")) {
      c.clip_lo = j.at("clip").at(0).get<double>();
      c.clip_hi = j.at("clip").at(1).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attack: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor<float> input_gradient(const Model& model, const Tensor<float>& images, std::span<const int> labels) {
  Graph<float> g;
  const Var<float> x = g.input(images, /*requires_grad=*/true);
  const ForwardPass<float> pass = forward(g, model.config, model.params, x);
  const Var<float> loss = softmax_cross_entropy(pass.logits, labels);
  g.backward(loss);
  const auto gx = g.grad(x);
  Tensor<float> out(images.shape());
  if (!gx.empty()) std::copy(gx.begin(), gx.end(), out.data().begin());
  return out;
}

namespace {

// Largest float step toward x + direction * eps whose distance from x, measured
// exactly in double, does not exceed eps.
float bounded_step(float x, float direction, double eps) {
  if (direction == 0.0f || eps == 0.0) return x;
  float v = x + direction * static_cast<float>(eps);
  while (std::abs(static_cast<double>(v) - static_cast<double>(x)) > eps) {
    v = std::nextafter(v, x);
  }
  return v;
}

}  // namespace

PerturbedBatch fgsm(const Model& model, const Tensor<float>& images, std::span<const int> labels,
                    const AttackConfig& config) {
  config.validate();
  PerturbedBatch out;
  out.labels.assign(labels.begin(), labels.end());
  out.images = images;
  out.images.clear_grad();
  out.images.set_requires_grad(false);
  out.perturbation = Tensor<float>(images.shape());
  if (config.epsilon == 0.0) return out;

  const Tensor<float> grad = input_gradient(model, images, labels);
  const double eps = config.epsilon;
  const float lo = static_cast<float>(config.clip_lo), hi = static_cast<float>(config.clip_hi);
  for (std::size_t i = 0; i < images.numel(); ++i) {
    const float g = grad[i];
    const float s = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
    const float x = images[i];
    const float v = std::clamp(bounded_step(x, s, eps), lo, hi);
    out.images[i] = v;
    out.perturbation[i] = v - x;
  }
  return out;
}

float adversarial_train_step(Model& model, const Tensor<float>& images, std::span<const int> labels,
                             AdamState& optimizer, const AttackConfig& config) {
  const PerturbedBatch adv = fgsm(model, images, labels, config);
  return train_step(model, adv.images, labels, optimizer);
}

Evaluation evaluate_under_attack(const Model& model, const Dataset& dataset, Split split,
                                 const AttackConfig& config, std::size_t batch_size, std::size_t positive_class) {
  Evaluation ev;
  BatchIterator it(dataset, split, batch_size, std::nullopt, 0, /*shuffle=*/false);
  double total = 0.0;
  while (auto batch = it.next()) {
    const PerturbedBatch adv = fgsm(model, batch->images, batch->labels, config);
    Graph<float> g;
    const ForwardPass<float> pass = forward(g, model.config, model.params, g.constant_ref(adv.images));
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

}  // namespace robustlens
