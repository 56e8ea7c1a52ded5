#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "robustlens/data.hpp"
#include "robustlens/image_io.hpp"
#include "robustlens/model.hpp"

namespace robustlens {

struct GradCamOptions {
  /// "conv1".."convK"; the last conv layer when empty.
  std::string layer;
  /// Explained class; the predicted class when unset.
  std::optional<int> target_class;
};

/// Grad-CAM localization map.
///
/// The tapped activation of a conv layer is its output after the ReLU that
/// directly follows it (the raw conv output when no ReLU follows).
struct Heatmap {
  std::size_t coarse_height = 0, coarse_width = 0;
  std::vector<double> coarse;  // ReLU(sum_k alpha_k A^k), unnormalized
  std::size_t height = 0, width = 0;
  std::vector<double> map;     // upsampled to the input size, scaled to max 1
  std::vector<double> channel_weights;  // alpha_k
  int class_id = 0;
  int predicted_class = 0;
  std::string layer;
  bool zero_map = false;       // raw map identically zero; `map` is all zeros
};

/// Throws ConfigError for an unknown or non-conv layer id, listing the valid
/// ids.
template <class T>
Heatmap gradcam(const ModelConfig& config, const ModelParams<T>& params, const Tensor<T>& image,
                const GradCamOptions& options = {});

Heatmap gradcam(const Model& model, const Tensor<float>& image, const GradCamOptions& options = {});

/// Layer index tapped for `layer` ("" = last conv), after the trailing ReLU.
std::size_t gradcam_tap_index(const ModelConfig& config, const std::string& layer);

/// Jet-colored heatmap alpha-blended over the grayscale image:
/// out = 0.6 * gray + 0.4 * jet(round(255 * h)), per channel, rounded.
RgbImage overlay(const Heatmap& heatmap, const Tensor<float>& image, double alpha = 0.4);

struct SaliencyScore {
  double containment = 0.0;        // saliency mass inside the mask / total mass
  double top_q_containment = 0.0;  // share of the top-q pixels inside the mask
  double q = 0.2;
  bool zero_mass = false;
};

/// `values` and `mask` are H x W row-major; mask entries are 0 or 1. The top
/// ceil(q * N) pixels are ranked by value, ties to the lower index.
SaliencyScore score_containment(std::span<const double> values, std::span<const float> mask, double q = 0.2);
SaliencyScore score_containment(const Heatmap& heatmap, const Tensor<float>& mask, double q = 0.2);

/// Share of total saliency mass inside a rectangle; 0 for a zero map.
double region_mass(const Heatmap& heatmap, std::size_t x, std::size_t y, std::size_t w, std::size_t h);

/// Bright text-like stamp burned into an image.
struct TextStamp {
  std::size_t x = 0;
  std::size_t y = 0;
  std::string text = "R";
  float intensity = 1.0f;

  std::size_t width() const { return text.empty() ? 0 : 4 * text.size() - 1; }
  static constexpr std::size_t height() { return 5; }
};

/// Stroke pixels of the stamp as (row, col) relative to its top-left corner.
std::vector<std::pair<std::size_t, std::size_t>> stamp_pixels(const std::string& text);

/// Draws the stamp glyphs (3x5 pixel font) into a 1 x H x W image; stroke
/// pixels become max(pixel, intensity). Throws ConfigError when the stamp
/// does not fit.
Tensor<float> burn_stamp(const Tensor<float>& image, const TextStamp& stamp);

struct AnnotationSensitivity {
  double containment_before = 0.0;
  double containment_after = 0.0;
  double containment_delta = 0.0;  // after - before
  double stamp_mass_before = 0.0;
  double stamp_mass_after = 0.0;
};

/// Grad-CAM of the clean and the stamped image (each explaining its own
/// predicted class), scored against `mask`.
AnnotationSensitivity annotation_sensitivity(const Model& model, const Tensor<float>& image,
                                             const Tensor<float>& mask, const TextStamp& stamp,
                                             const std::string& layer = "", double q = 0.2);

nlohmann::json to_json(const SaliencyScore& s);
nlohmann::json to_json(const AnnotationSensitivity& a);

}  // namespace robustlens
