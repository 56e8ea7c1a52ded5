#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "robustlens/data.hpp"

namespace robustlens {

/// Parameters of the synthetic chest-radiograph-like toy dataset.
///
/// Every image shows a body silhouette with two dark lung fields. COVID
/// images carry one soft lesion in each lung, pneumonia images one larger
/// lesion in a single lung, normal images none. Masks mark the lesions
/// (infection mask) or, for normal images, the lung fields.
///
/// Optionally a faint text marker is added in the top-left corner whose text
/// depends on the class with probability `stamp_correlation` (otherwise the
/// text of a random other class is used).
struct SyntheticConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::array<std::size_t, 3> per_class{64, 16, 32};  // train, val, test counts per class
  double lesion_amplitude = 0.22;
  double noise_sigma = 0.03;
  bool stamps = false;
  double stamp_contrast = 0.06;
  double stamp_correlation = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SyntheticConfig& c);
SyntheticConfig synthetic_from_json(const nlohmann::json& j);

/// Marker text of each class and its placement.
inline constexpr std::array<const char*, 3> kStampTexts{"NL", "CV", "PN"};
inline constexpr std::size_t kStampX = 1;
inline constexpr std::size_t kStampY = 1;

/// One generated sample; the image has values in [0, 1] and the mask is set.
Sample synthetic_sample(const SyntheticConfig& config, int label, Rng& rng);

/// In-memory dataset. Sample streams are derived from (seed, split, index), so
/// the content of one split does not depend on the sizes of the others.
Dataset make_synthetic_dataset(const SyntheticConfig& config);

/// Writes images/<split>/<class>_<i>.png, masks/<split>/<class>_<i>.png and
/// manifest.csv under `dir`; returns the manifest path. Pixel values are
/// quantized to 8 bits.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticConfig& config);

}  // namespace robustlens
