#include "robustlens/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include "robustlens/image_io.hpp"

namespace robustlens {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& token) {
  if (token == "train") return Split::kTrain;
  if (token == "val" || token == "validation") return Split::kVal;
  if (token == "test") return Split::kTest;
  throw DataError("manifest: unknown split '" + token + "'");
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                [&](const ManifestRecord& r) { return r.split == split; }));
}

std::size_t DatasetManifest::count_label(int label) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                [&](const ManifestRecord& r) { return r.label == label; }));
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// RFC 4180 fields; quotes may wrap a field and "" escapes a quote.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("manifest line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(trim(cur));
  return fields;
}

int parse_label(const std::string& token, std::size_t num_classes, std::size_t line_no) {
  std::string lower = token;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (std::size_t i = 0; i < kClassNames.size() && i < num_classes; ++i) {
    if (lower == kClassNames[i]) return static_cast<int>(i);
  }
  if (!lower.empty() && std::all_of(lower.begin(), lower.end(), [](unsigned char c) { return std::isdigit(c); }) &&
      lower.size() < 9) {
    const int id = std::stoi(lower);
    if (static_cast<std::size_t>(id) < num_classes) return id;
  }
  throw DataError("manifest line " + std::to_string(line_no) + ": unknown label '" + token + "'");
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               const ManifestOptions& options) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool has_source = false;
  DatasetManifest manifest;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line, line_no);
    if (!have_header) {
      const std::vector<std::string> base{"path", "label", "split", "mask_path"};
      if (f.size() < 4 || !std::equal(base.begin(), base.end(), f.begin()) ||
          (f.size() == 5 && f[4] != "source") || f.size() > 5) {
        throw DataError("manifest: header must be 'path,label,split,mask_path[,source]'");
      }
      has_source = f.size() == 5;
      have_header = true;
      continue;
    }
    const std::size_t expected = has_source ? 5 : 4;
    if (f.size() != expected) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected " +
                      std::to_string(expected) + " fields, got " + std::to_string(f.size()));
    }
    if (f[0].empty()) throw DataError("manifest line " + std::to_string(line_no) + ": empty path");
    ManifestRecord r;
    r.image = base_dir / f[0];
    r.label = parse_label(f[1], options.num_classes, line_no);
    try {
      r.split = parse_split(f[2]);
    } catch (const DataError&) {
      throw DataError("manifest line " + std::to_string(line_no) + ": unknown split '" + f[2] + "'");
    }
    if (!f[3].empty()) r.mask = base_dir / f[3];
    r.source = has_source && !f[4].empty() ? f[4] : "default";
    const std::string key = r.image.lexically_normal().string();
    if (!seen.insert(key).second) {
      throw DataError("manifest line " + std::to_string(line_no) + ": duplicate path '" + f[0] + "'");
    }
    if (options.eager_validation) {
      if (!std::filesystem::exists(r.image)) {
        throw DataError("manifest line " + std::to_string(line_no) + ": missing file '" + r.image.string() + "'");
      }
      if (r.mask && !std::filesystem::exists(*r.mask)) {
        throw DataError("manifest line " + std::to_string(line_no) + ": missing mask '" + r.mask->string() + "'");
      }
    }
    manifest.records.push_back(std::move(r));
  }
  if (!have_header) throw DataError("manifest: empty file");
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("manifest: cannot open '" + path.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_manifest(text, path.parent_path(), options);
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("manifest: cannot write '" + path.string() + "'");
  const std::filesystem::path base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return base.empty() ? p.generic_string() : p.lexically_relative(base).generic_string();
  };
  auto field = [](const std::string& v) {
    if (v.find_first_of(",\"\r\n") == std::string::npos) return v;
    std::string q = "\"";
    for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  out << "path,label,split,mask_path,source\n";
  for (const auto& r : manifest.records) {
    out << field(rel(r.image)) << ',' << kClassNames.at(static_cast<std::size_t>(r.label)) << ','
        << split_name(r.split) << ',' << field(r.mask ? rel(*r.mask) : std::string()) << ',' << field(r.source)
        << '\n';
  }
}

// Augmentation -----------------------------------------------------------

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.horizontal_flip = false;
  c.vertical_flip = false;
  c.zoom = {1.0, 1.0};
  c.rotation_deg = {0.0, 0.0};
  c.width_shift = 0.0;
  c.height_shift = 0.0;
  c.shear_deg = 0.0;
  return c;
}

void AugmentationConfig::validate() const {
  if (!(rescale > 0.0)) throw ConfigError("augmentation: rescale must be positive");
  if (!(zoom[0] > 0.0) || zoom[0] > zoom[1]) throw ConfigError("augmentation: zoom range must satisfy 0 < lo <= hi");
  if (rotation_deg[0] > rotation_deg[1]) throw ConfigError("augmentation: rotation range must satisfy lo <= hi");
  if (width_shift < 0.0 || height_shift < 0.0) throw ConfigError("augmentation: shifts must be non-negative");
  if (shear_deg < 0.0 || shear_deg >= 90.0) throw ConfigError("augmentation: shear must lie in [0, 90) degrees");
}

nlohmann::json to_json(const AugmentationConfig& c) {
  return nlohmann::json{{"rescale", c.rescale},           {"horizontal_flip", c.horizontal_flip},
                        {"vertical_flip", c.vertical_flip}, {"zoom", c.zoom},
                        {"rotation_deg", c.rotation_deg},   {"width_shift", c.width_shift},
                        {"height_shift", c.height_shift},   {"shear_deg", c.shear_deg},
                        {"seed", c.seed}};
}

AugmentationConfig augmentation_from_json(const nlohmann::json& j) {
  AugmentationConfig c;
  try {
    c.rescale = j.value("rescale", c.rescale);
    c.horizontal_flip = j.value("horizontal_flip", c.horizontal_flip);
    c.vertical_flip = j.value("vertical_flip", c.vertical_flip);
    c.zoom = j.value("zoom", c.zoom);
    c.rotation_deg = j.value("rotation_deg", c.rotation_deg);
    c.width_shift = j.value("width_shift", c.width_shift);
    c.height_shift = j.value("height_shift", c.height_shift);
    c.shear_deg = j.value("shear_deg", c.shear_deg);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("augmentation: ") + e.what());
  }
  c.validate();
  return c;
}

AffineDraw draw_affine(const AugmentationConfig& config, std::size_t height, std::size_t width, Rng& rng) {
  AffineDraw d;
  d.hflip = config.horizontal_flip && rng.bernoulli(0.5);
  d.vflip = config.vertical_flip && rng.bernoulli(0.5);
  d.zoom = rng.uniform(config.zoom[0], config.zoom[1]);
  d.rotation_deg = rng.uniform(config.rotation_deg[0], config.rotation_deg[1]);
  d.shift_x = rng.uniform(-config.width_shift, config.width_shift) * static_cast<double>(width);
  d.shift_y = rng.uniform(-config.height_shift, config.height_shift) * static_cast<double>(height);
  d.shear_deg = rng.uniform(-config.shear_deg, config.shear_deg);
  return d;
}

namespace {

// cos/sin of an angle in degrees, exact at multiples of 90.
std::pair<double, double> cos_sin_deg(double deg) {
  const double q = deg / 90.0;
  if (q == std::round(q) && std::abs(q) < 1e9) {
    switch (((static_cast<long long>(q) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  const double rad = deg * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

AffineMatrix inverse_affine(const AffineDraw& d, std::size_t height, std::size_t width) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const auto [cr, sr] = cos_sin_deg(d.rotation_deg);
  const double sh = std::tan(d.shear_deg * kDeg);
  const double fx = d.hflip ? -1.0 : 1.0, fy = d.vflip ? -1.0 : 1.0;
  const double z = d.zoom > 0.0 ? d.zoom : 1.0;
  // A = R * Shear * (z * Flip)
  const double a00 = cr * z * fx, a01 = (cr * sh - sr) * z * fy;
  const double a10 = sr * z * fx, a11 = (sr * sh + cr) * z * fy;
  const double det = a00 * a11 - a01 * a10;
  double i00 = 1, i01 = 0, i10 = 0, i11 = 1;
  if (std::abs(det) > 1e-12) {
    i00 = a11 / det;
    i01 = -a01 / det;
    i10 = -a10 / det;
    i11 = a00 / det;
  }
  const double ox = cx + d.shift_x, oy = cy + d.shift_y;
  return {i00, i01, cx - i00 * ox - i01 * oy, i10, i11, cy - i10 * ox - i11 * oy};
}

Sample apply_affine(const Sample& sample, const AffineMatrix& m) {
  const Shape& s = sample.image.shape();
  if (s.size() != 3) throw ShapeError("augment: image must be C x H x W, got " + shape_str(s));
  const std::size_t channels = s[0], h = s[1], w = s[2];
  Sample out;
  out.label = sample.label;
  out.image = Tensor<float>(s);
  const auto src = sample.image.data();
  auto dst = out.image.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const auto plane = src.subspan(c * h * w, h * w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double sx = m[0] * static_cast<double>(j) + m[1] * static_cast<double>(i) + m[2];
        const double sy = m[3] * static_cast<double>(j) + m[4] * static_cast<double>(i) + m[5];
        dst[c * h * w + i * w + j] = std::clamp(bilinear_at<float>(plane, h, w, sx, sy), 0.0f, 1.0f);
      }
  }
  if (sample.mask) {
    const Tensor<float>& mk = *sample.mask;
    if (mk.shape() != Shape{h, w}) {
      throw ShapeError("augment: mask " + shape_str(mk.shape()) + " does not match image " + shape_str(s));
    }
    Tensor<float> om({h, w});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double sx = m[0] * static_cast<double>(j) + m[1] * static_cast<double>(i) + m[2];
        const double sy = m[3] * static_cast<double>(j) + m[4] * static_cast<double>(i) + m[5];
        const double rx = std::floor(sx + 0.5), ry = std::floor(sy + 0.5);
        if (rx < 0 || ry < 0 || rx >= static_cast<double>(w) || ry >= static_cast<double>(h)) continue;
        om[i * w + j] = mk[static_cast<std::size_t>(ry) * w + static_cast<std::size_t>(rx)];
      }
    out.mask = std::move(om);
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentationConfig& config, Rng& rng) {
  const Shape& s = sample.image.shape();
  if (s.size() != 3) throw ShapeError("augment: image must be C x H x W, got " + shape_str(s));
  const AffineDraw d = draw_affine(config, s[1], s[2], rng);
  return apply_affine(sample, inverse_affine(d, s[1], s[2]));
}

// Dataset / batching ----------------------------------------------------

Dataset Dataset::from_manifest(const DatasetManifest& manifest, std::size_t height, std::size_t width,
                               double rescale) {
  Dataset ds;
  for (const ManifestRecord& r : manifest.records) {
    Sample s;
    s.image = decode_image(r.image, height, width, rescale);
    s.label = r.label;
    if (r.mask) s.mask = decode_mask(*r.mask, height, width);
    const auto idx = static_cast<std::size_t>(r.split);
    ds.splits_[idx].push_back(std::move(s));
    ds.paths_[idx].push_back(r.image);
  }
  return ds;
}

void Dataset::add(Split split, Sample sample) {
  const auto idx = static_cast<std::size_t>(split);
  if (!splits_[idx].empty() && splits_[idx].front().image.shape() != sample.image.shape()) {
    throw ShapeError("dataset: sample shape " + shape_str(sample.image.shape()) + " differs from split shape " +
                     shape_str(splits_[idx].front().image.shape()));
  }
  splits_[idx].push_back(std::move(sample));
}

std::optional<std::filesystem::path> Dataset::path(Split s, std::size_t i) const {
  const auto& p = paths_[static_cast<std::size_t>(s)];
  if (i < p.size()) return p[i];
  return std::nullopt;
}

Tensor<float> stack_images(const std::vector<const Tensor<float>*>& images) {
  if (images.empty()) throw ShapeError("stack: no images");
  const Shape& s = images.front()->shape();
  Shape out_shape{images.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor<float> out(out_shape);
  const std::size_t per = images.front()->numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ShapeError("stack: mixed image shapes");
    std::copy(images[i]->data().begin(), images[i]->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& dataset, Split split, std::size_t batch_size,
                             std::optional<AugmentationConfig> augmentation, std::uint64_t seed, bool shuffle)
    : dataset_(&dataset), split_(split), batch_size_(batch_size), augmentation_(std::move(augmentation)), seed_(seed) {
  const std::size_t n = dataset.size(split);
  if (n == 0) throw DataError("batch: split '" + std::string(split_name(split)) + "' is empty");
  if (batch_size == 0) throw ConfigError("batch: batch size must be positive");
  if (augmentation_) augmentation_->validate();
  order_.resize(n);
  for (std::size_t i = 0; i < n; ++i) order_[i] = i;
  if (shuffle) {
    Rng rng(mix_seed(seed));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order_[i], order_[rng.below(i + 1)]);
  }
}

std::size_t BatchIterator::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  const auto& samples = dataset_->split(split_);
  Batch b;
  std::vector<Tensor<float>> augmented;
  augmented.reserve(end - cursor_);
  std::vector<const Tensor<float>*> ptrs;
  for (std::size_t k = cursor_; k < end; ++k) {
    const std::size_t idx = order_[k];
    b.indices.push_back(idx);
    b.labels.push_back(samples[idx].label);
    if (augmentation_) {
      Rng rng(derive_seed(seed_ ^ mix_seed(augmentation_->seed), idx));
      augmented.push_back(augment(samples[idx], *augmentation_, rng).image);
      ptrs.push_back(&augmented.back());
    } else {
      ptrs.push_back(&samples[idx].image);
    }
  }
  b.images = stack_images(ptrs);
  cursor_ = end;
  return b;
}

}  // namespace robustlens
