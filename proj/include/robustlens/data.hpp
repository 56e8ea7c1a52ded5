#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "robustlens/ops.hpp"
#include "robustlens/rng.hpp"

namespace robustlens {

enum class Split { kTrain, kVal, kTest };

std::string_view split_name(Split s);
Split parse_split(const std::string& token);

/// Class ids used by manifests: normal = 0, covid = 1, pneumonia = 2.
inline constexpr int kNormal = 0;
inline constexpr int kCovid = 1;
inline constexpr int kPneumonia = 2;
inline constexpr std::array<const char*, 3> kClassNames{"normal", "covid", "pneumonia"};

struct ManifestRecord {
  std::filesystem::path image;
  int label = 0;
  Split split = Split::kTrain;
  std::optional<std::filesystem::path> mask;
  std::string source;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::size_t count(Split split) const;
  std::size_t count_label(int label) const;
  std::size_t size() const { return records.size(); }
};

struct ManifestOptions {
  std::size_t num_classes = 3;
  /// Check that every referenced image and mask exists.
  bool eager_validation = true;
};

/// Parses a UTF-8 CSV manifest with header `path,label,split,mask_path` and
/// an optional trailing `source` column. Relative paths resolve against the
/// manifest's directory. Throws DataError.
DatasetManifest load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               const ManifestOptions& options = {});
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// One decoded example.
struct Sample {
  Tensor<float> image;                // 1 x H x W, values in [0, 1]
  int label = 0;
  std::optional<Tensor<float>> mask;  // H x W, values in {0, 1}
};

/// Augmentation ranges; defaults are the training-time settings.
struct AugmentationConfig {
  double rescale = 1.0 / 255.0;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  std::array<double, 2> zoom{0.80, 1.20};
  std::array<double, 2> rotation_deg{0.0, 180.0};
  double width_shift = 0.20;   // fraction of width, symmetric
  double height_shift = 0.20;  // fraction of height, symmetric
  double shear_deg = 10.0;     // x-axis shear angle, symmetric
  std::uint64_t seed = 0;

  /// Every range collapsed; augment() is then a no-op.
  static AugmentationConfig identity();
  /// Throws ConfigError for ill-ordered ranges or non-positive rescale.
  void validate() const;
};

nlohmann::json to_json(const AugmentationConfig& c);
AugmentationConfig augmentation_from_json(const nlohmann::json& j);

/// One draw of geometric parameters.
struct AffineDraw {
  bool hflip = false;
  bool vflip = false;
  double zoom = 1.0;
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;  // pixels
  double shear_deg = 0.0;
};

AffineDraw draw_affine(const AugmentationConfig& config, std::size_t height, std::size_t width, Rng& rng);

/// Output-to-source pixel map of the forward transform
/// p' = c + t + R(rot) * Shear * Zoom * Flip * (p - c), c the image center.
AffineMatrix inverse_affine(const AffineDraw& draw, std::size_t height, std::size_t width);

/// Applies `m` to the image (bilinear, zero fill, clamped to [0,1]) and to
/// the mask (nearest neighbor, zero fill).
Sample apply_affine(const Sample& sample, const AffineMatrix& m);

/// Draws one affine transform and applies it. Shape and label never change.
Sample augment(const Sample& sample, const AugmentationConfig& config, Rng& rng);

/// Decoded samples grouped by split.
class Dataset {
 public:
  Dataset() = default;

  /// Decodes every manifest record to height x width.
  static Dataset from_manifest(const DatasetManifest& manifest, std::size_t height, std::size_t width,
                               double rescale = 1.0 / 255.0);

  void add(Split split, Sample sample);
  const std::vector<Sample>& split(Split s) const { return splits_[static_cast<std::size_t>(s)]; }
  std::size_t size(Split s) const { return split(s).size(); }
  /// Source path of sample i in split s, when loaded from a manifest.
  std::optional<std::filesystem::path> path(Split s, std::size_t i) const;

 private:
  std::array<std::vector<Sample>, 3> splits_;
  std::array<std::vector<std::filesystem::path>, 3> paths_;
};

struct Batch {
  Tensor<float> images;              // N x 1 x H x W
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions within the split
};

/// Seeded epoch iterator. Order is a permutation drawn from `seed`; the
/// final partial batch is emitted. With augmentation, sample i draws from
/// the stream derive_seed(seed, i), so results do not depend on batching.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, Split split, std::size_t batch_size,
                std::optional<AugmentationConfig> augmentation, std::uint64_t seed,
                bool shuffle = true);

  std::optional<Batch> next();
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* dataset_;
  Split split_;
  std::size_t batch_size_;
  std::optional<AugmentationConfig> augmentation_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Stacks 1 x H x W images into N x 1 x H x W.
Tensor<float> stack_images(const std::vector<const Tensor<float>*>& images);

}  // namespace robustlens
