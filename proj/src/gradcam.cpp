#include "robustlens/gradcam.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "robustlens/colormap.hpp"

namespace robustlens {

std::size_t gradcam_tap_index(const ModelConfig& config, const std::string& layer) {
  const std::vector<std::string> ids = conv_layer_ids(config);
  if (ids.empty()) throw ConfigError("gradcam: model has no conv layers");
  const std::string id = layer.empty() ? ids.back() : layer;
  const std::optional<std::size_t> idx = conv_layer_index(config, id);
  if (!idx) {
    std::string list;
    for (const auto& s : ids) list += (list.empty() ? "" : ", ") + s;
    throw ConfigError("gradcam: unknown conv layer '" + id + "'; available layers: " + list);
  }
  std::size_t tap = *idx;
  if (tap + 1 < config.layers.size() && std::holds_alternative<ReluSpec>(config.layers[tap + 1])) ++tap;
  return tap;
}

template <class T>
Heatmap gradcam(const ModelConfig& config, const ModelParams<T>& params, const Tensor<T>& image,
                const GradCamOptions& options) {
  const std::size_t tap = gradcam_tap_index(config, options.layer);
  const Shape& s = image.shape();
  Shape batch_shape = s;
  if (s.size() == 3) batch_shape.insert(batch_shape.begin(), 1);
  if (batch_shape.size() != 4 || batch_shape[0] != 1) {
    throw ShapeError("gradcam: expected one C x H x W image, got " + shape_str(s));
  }

  Graph<T> g;
  const Var<T> x = g.input(image.reshaped(batch_shape), /*requires_grad=*/true);
  const ForwardPass<T> pass = forward(g, config, params, x);
  const Tensor<T>& logits = pass.logits.value();
  const std::size_t k = config.num_classes;
  std::size_t predicted = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (logits[j] > logits[predicted]) predicted = j;
  const int target = options.target_class.value_or(static_cast<int>(predicted));
  if (target < 0 || static_cast<std::size_t>(target) >= k) {
    throw ConfigError("gradcam: class " + std::to_string(target) + " outside [0, " + std::to_string(k) + ")");
  }

  const Var<T> act = pass.layer_outputs[tap];
  const Tensor<T> activations = act.value();
  std::vector<T> seed(k, T{0});
  seed[static_cast<std::size_t>(target)] = T{1};
  g.backward(pass.logits, seed);
  const auto dact = g.grad(act);

  const std::size_t channels = activations.dim(1), h = activations.dim(2), w = activations.dim(3);
  const std::size_t plane = h * w;
  Heatmap hm;
  hm.layer = options.layer.empty() ? conv_layer_ids(config).back() : options.layer;
  hm.class_id = target;
  hm.predicted_class = static_cast<int>(predicted);
  hm.coarse_height = h;
  hm.coarse_width = w;
  hm.channel_weights.assign(channels, 0.0);
  hm.coarse.assign(plane, 0.0);
  if (!dact.empty()) {
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(dact[c * plane + i]);
      hm.channel_weights[c] = acc / static_cast<double>(plane);
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double a = hm.channel_weights[c];
    if (a == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i) hm.coarse[i] += a * static_cast<double>(activations[c * plane + i]);
  }
  for (double& v : hm.coarse) v = std::max(v, 0.0);

  hm.height = batch_shape[2];
  hm.width = batch_shape[3];
  hm.map = resize_plane_bilinear(hm.coarse, h, w, hm.height, hm.width);
  const double peak = *std::max_element(hm.map.begin(), hm.map.end());
  if (!(peak > 0.0)) {
    hm.zero_map = true;
    std::fill(hm.map.begin(), hm.map.end(), 0.0);
  } else {
    for (double& v : hm.map) v = std::max(v, 0.0) / peak;
  }
  return hm;
}

template Heatmap gradcam<float>(const ModelConfig&, const ModelParams<float>&, const Tensor<float>&,
                                const GradCamOptions&);
template Heatmap gradcam<double>(const ModelConfig&, const ModelParams<double>&, const Tensor<double>&,
                                 const GradCamOptions&);

Heatmap gradcam(const Model& model, const Tensor<float>& image, const GradCamOptions& options) {
  return gradcam(model.config, model.params, image, options);
}

RgbImage overlay(const Heatmap& heatmap, const Tensor<float>& image, double alpha) {
  const Shape& s = image.shape();
  const bool ok = (s.size() == 3 && s[0] == 1 && s[1] == heatmap.height && s[2] == heatmap.width) ||
                  (s.size() == 2 && s[0] == heatmap.height && s[1] == heatmap.width);
  if (!ok || heatmap.map.size() != heatmap.height * heatmap.width) {
    throw ShapeError("overlay: image " + shape_str(s) + " does not match heatmap " +
                     std::to_string(heatmap.height) + "x" + std::to_string(heatmap.width));
  }
  RgbImage out;
  out.height = heatmap.height;
  out.width = heatmap.width;
  out.pixels.resize(out.height * out.width * 3);
  for (std::size_t i = 0; i < heatmap.map.size(); ++i) {
    const double h = std::clamp(heatmap.map[i], 0.0, 1.0);
    const auto& color = kJetColormap[static_cast<std::size_t>(std::lround(h * 255.0))];
    const double gray = std::clamp(static_cast<double>(image[i]), 0.0, 1.0) * 255.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = (1.0 - alpha) * gray + alpha * static_cast<double>(color[c]);
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

SaliencyScore score_containment(std::span<const double> values, std::span<const float> mask, double q) {
  if (values.size() != mask.size()) {
    throw ShapeError("containment: heatmap has " + std::to_string(values.size()) + " pixels, mask " +
                     std::to_string(mask.size()));
  }
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("containment: q must lie in (0, 1]");
  SaliencyScore s;
  s.q = q;
  double total = 0.0, inside = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::max(values[i], 0.0);
    total += v;
    if (mask[i] > 0.5f) inside += v;
  }
  if (!(total > 0.0)) {
    s.zero_mass = true;
    return s;
  }
  s.containment = std::clamp(inside / total, 0.0, 1.0);

  const std::size_t n = values.size();
  const std::size_t top = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  std::size_t hits = 0;
  for (std::size_t r = 0; r < top; ++r) hits += mask[order[r]] > 0.5f ? 1 : 0;
  s.top_q_containment = static_cast<double>(hits) / static_cast<double>(top);
  return s;
}

SaliencyScore score_containment(const Heatmap& heatmap, const Tensor<float>& mask, double q) {
  if (mask.numel() != heatmap.map.size()) {
    throw ShapeError("containment: mask " + shape_str(mask.shape()) + " does not match heatmap " +
                     std::to_string(heatmap.height) + "x" + std::to_string(heatmap.width));
  }
  return score_containment(heatmap.map, mask.data(), q);
}

double region_mass(const Heatmap& heatmap, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  if (x + w > heatmap.width || y + h > heatmap.height) throw ConfigError("region outside heatmap bounds");
  double total = 0.0, inside = 0.0;
  for (std::size_t i = 0; i < heatmap.height; ++i)
    for (std::size_t j = 0; j < heatmap.width; ++j) {
      const double v = heatmap.map[i * heatmap.width + j];
      total += v;
      if (i >= y && i < y + h && j >= x && j < x + w) inside += v;
    }
  return total > 0.0 ? inside / total : 0.0;
}

namespace {

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
std::array<std::uint8_t, 5> glyph(char c) {
  switch (c) {
    case 'A': return {0b010, 0b101, 0b111, 0b101, 0b101};
    case 'B': return {0b110, 0b101, 0b110, 0b101, 0b110};
    case 'C': return {0b011, 0b100, 0b100, 0b100, 0b011};
    case 'D': return {0b110, 0b101, 0b101, 0b101, 0b110};
    case 'E': return {0b111, 0b100, 0b110, 0b100, 0b111};
    case 'N': return {0b101, 0b111, 0b111, 0b111, 0b101};
    case 'V': return {0b101, 0b101, 0b101, 0b101, 0b010};
    case 'L': return {0b100, 0b100, 0b100, 0b100, 0b111};
    case 'P': return {0b110, 0b101, 0b110, 0b100, 0b100};
    case 'R': return {0b110, 0b101, 0b110, 0b101, 0b101};
    case 'T': return {0b111, 0b010, 0b010, 0b010, 0b010};
    case 'X': return {0b101, 0b101, 0b010, 0b101, 0b101};
    default: return {0b111, 0b101, 0b101, 0b101, 0b111};
  }
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> stamp_pixels(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t k = 0; k < text.size(); ++k) {
    const auto rows = glyph(text[k]);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 3; ++c)
        if ((rows[r] >> (2 - c)) & 1u) out.emplace_back(r, 4 * k + c);
  }
  return out;
}

Tensor<float> burn_stamp(const Tensor<float>& image, const TextStamp& stamp) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("stamp: expected a 1 x H x W image, got " + shape_str(s));
  const std::size_t h = s[1], w = s[2];
  if (stamp.text.empty()) throw ConfigError("stamp: empty text");
  if (stamp.x + stamp.width() > w || stamp.y + TextStamp::height() > h) {
    throw ConfigError("stamp: " + std::to_string(stamp.width()) + "x" + std::to_string(TextStamp::height()) +
                      " stamp at (" + std::to_string(stamp.x) + ", " + std::to_string(stamp.y) +
                      ") outside " + std::to_string(w) + "x" + std::to_string(h) + " image");
  }
  Tensor<float> out = image;
  out.clear_grad();
  for (const auto& [r, c] : stamp_pixels(stamp.text)) {
    float& px = out[(stamp.y + r) * w + stamp.x + c];
    px = std::max(px, stamp.intensity);
  }
  return out;
}

AnnotationSensitivity annotation_sensitivity(const Model& model, const Tensor<float>& image,
                                             const Tensor<float>& mask, const TextStamp& stamp,
                                             const std::string& layer, double q) {
  const Tensor<float> stamped = burn_stamp(image, stamp);
  GradCamOptions opts;
  opts.layer = layer;
  const Heatmap before = gradcam(model, image, opts);
  const Heatmap after = gradcam(model, stamped, opts);
  AnnotationSensitivity a;
  a.containment_before = score_containment(before, mask, q).containment;
  a.containment_after = score_containment(after, mask, q).containment;
  a.containment_delta = a.containment_after - a.containment_before;
  a.stamp_mass_before = region_mass(before, stamp.x, stamp.y, stamp.width(), TextStamp::height());
  a.stamp_mass_after = region_mass(after, stamp.x, stamp.y, stamp.width(), TextStamp::height());
  return a;
}

nlohmann::json to_json(const SaliencyScore& s) {
  return nlohmann::json{{"containment", s.containment},
                        {"top_q_containment", s.top_q_containment},
                        {"q", s.q},
                        {"zero_mass", s.zero_mass}};
}

nlohmann::json to_json(const AnnotationSensitivity& a) {
  return nlohmann::json{{"containment_before", a.containment_before},
                        {"containment_after", a.containment_after},
                        {"containment_delta", a.containment_delta},
                        {"stamp_mass_before", a.stamp_mass_before},
                        {"stamp_mass_after", a.stamp_mass_after}};
}

}  // namespace robustlens
