#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "robustlens/ops.hpp"

namespace robustlens {

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
};
struct MaxPoolSpec {
  std::size_t window = 2;
};
struct DenseSpec {
  std::size_t width = 0;
};
struct ReluSpec {};
struct FlattenSpec {};

using LayerSpec = std::variant<ConvSpec, MaxPoolSpec, DenseSpec, ReluSpec, FlattenSpec>;

/// Layer-by-layer architecture of a classifier.
struct ModelConfig {
  std::string name = "custom";
  std::array<std::size_t, 3> input{1, 64, 64};  // C, H, W
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 3;
  std::uint64_t seed = 0;
};

/// Per-sample output shape of every layer (C,H,W for spatial layers, {F}
/// after flatten/dense). Throws ShapeError naming the failing layer index.
std::vector<Shape> shape_check(const ModelConfig& config);

/// Two conv blocks and a dense head; intended for tests and desk-scale runs.
ModelConfig tiny_config(std::size_t height = 64, std::size_t width = 64, std::size_t channels = 1,
                        std::size_t num_classes = 3);
/// Four VGG-style 3x3 conv blocks followed by a two-layer dense head.
ModelConfig vgg_mini_config(std::size_t height = 64, std::size_t width = 64,
                            std::size_t channels = 1, std::size_t num_classes = 3);
/// Resolves "tiny" / "vgg-mini"; throws ConfigError otherwise.
ModelConfig preset_config(const std::string& name, std::size_t height, std::size_t width,
                          std::size_t channels = 1, std::size_t num_classes = 3);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Layer ids usable by Grad-CAM: "conv1".."convK" in network order.
std::vector<std::string> conv_layer_ids(const ModelConfig& config);
/// Index into config.layers of the named conv layer, or nullopt.
std::optional<std::size_t> conv_layer_index(const ModelConfig& config, const std::string& id);

enum class ParamRole { kWeight, kBias };

template <class T>
struct NamedParam {
  std::size_t layer = 0;
  ParamRole role = ParamRole::kWeight;
  Tensor<T> tensor;

  std::string name() const {
    return "layer" + std::to_string(layer) + (role == ParamRole::kWeight ? ".weight" : ".bias");
  }
};

/// Model parameters, ordered by layer then weight before bias.
template <class T>
struct ModelParams {
  std::vector<NamedParam<T>> entries;

  Tensor<T>& get(std::size_t layer, ParamRole role);
  const Tensor<T>& get(std::size_t layer, ParamRole role) const;
  std::size_t count() const;
  bool all_finite() const;

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& e : entries) out.entries.push_back({e.layer, e.role, e.tensor.template cast<U>()});
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      const auto& x = a.entries[i];
      const auto& y = b.entries[i];
      if (x.layer != y.layer || x.role != y.role || !(x.tensor == y.tensor)) return false;
    }
    return true;
  }
};

/// Allocates parameters: He-uniform weights (bound sqrt(6 / fan_in)), zero
/// biases, drawn deterministically from config.seed.
ModelParams<float> build(const ModelConfig& config);

/// Closed-form parameter count from the layer specs.
std::size_t parameter_count(const ModelConfig& config);

template <class T>
struct ForwardPass {
  Var<T> logits;
  std::vector<Var<T>> layer_outputs;  // one per config layer
};

/// Records the network on `g`. Parameters enter as leaves, so they collect
/// gradients iff their tensors have requires_grad set.
template <class T>
ForwardPass<T> forward(Graph<T>& g, const ModelConfig& config, ModelParams<T>& params,
                       Var<T> input);
/// Same, with parameters as read-only constants.
template <class T>
ForwardPass<T> forward(Graph<T>& g, const ModelConfig& config, const ModelParams<T>& params,
                       Var<T> input);

/// A config with its parameters.
struct Model {
  ModelConfig config;
  ModelParams<float> params;
};

/// Logits N x num_classes for an N x C x H x W batch.
Tensor<float> predict(const Model& model, const Tensor<float>& batch);

/// Row-wise argmax, ties to the lowest class index.
std::vector<int> argmax_rows(const Tensor<float>& logits);

struct TrainingMetadata {
  std::uint64_t epoch = 0;
  double best_val_loss = 0.0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  ModelConfig config;
  ModelParams<float> params;
  TrainingMetadata metadata;
};

/// File layout: "RLCK", u32 LE version, u32 LE header length, header as
/// canonical JSON (config, metadata, tensor table with offsets), then the
/// little-endian f32 payload.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

extern template ForwardPass<float> forward<float>(Graph<float>&, const ModelConfig&,
                                                  ModelParams<float>&, Var<float>);
extern template ForwardPass<double> forward<double>(Graph<double>&, const ModelConfig&,
                                                    ModelParams<double>&, Var<double>);
extern template ForwardPass<float> forward<float>(Graph<float>&, const ModelConfig&,
                                                  const ModelParams<float>&, Var<float>);
extern template ForwardPass<double> forward<double>(Graph<double>&, const ModelConfig&,
                                                    const ModelParams<double>&, Var<double>);

}  // namespace robustlens
