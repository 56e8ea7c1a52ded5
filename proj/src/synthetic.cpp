#include "robustlens/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "robustlens/gradcam.hpp"
#include "robustlens/image_io.hpp"

namespace robustlens {

void SyntheticConfig::validate() const {
  if (height < 16 || width < 16) throw ConfigError("synthetic: images must be at least 16 x 16");
  if (!(lesion_amplitude >= 0.0 && lesion_amplitude <= 1.0)) throw ConfigError("synthetic: lesion_amplitude outside [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic: noise_sigma must be >= 0");
  if (!(stamp_contrast >= 0.0 && stamp_contrast <= 1.0)) throw ConfigError("synthetic: stamp_contrast outside [0, 1]");
  if (!(stamp_correlation >= 0.0 && stamp_correlation <= 1.0)) {
    throw ConfigError("synthetic: stamp_correlation outside [0, 1]");
  }
}

nlohmann::json to_json(const SyntheticConfig& c) {
  return nlohmann::json{{"height", c.height},
                        {"width", c.width},
                        {"per_class", c.per_class},
                        {"lesion_amplitude", c.lesion_amplitude},
                        {"noise_sigma", c.noise_sigma},
                        {"stamps", c.stamps},
                        {"stamp_contrast", c.stamp_contrast},
                        {"stamp_correlation", c.stamp_correlation},
                        {"seed", c.seed}};
}

SyntheticConfig synthetic_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    if (j.contains("per_class")) c.per_class = j.at("per_class").get<std::array<std::size_t, 3>>();
    c.lesion_amplitude = j.value("lesion_amplitude", c.lesion_amplitude);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.stamps = j.value("stamps", c.stamps);
    c.stamp_contrast = j.value("stamp_contrast", c.stamp_contrast);
    c.stamp_correlation = j.value("stamp_correlation", c.stamp_correlation);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  double norm(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy;
  }
};

// Uniform point inside the inner part of an ellipse.
std::pair<double, double> point_in(const Ellipse& e, double shrink, Rng& rng) {
  const double r = shrink * std::sqrt(rng.uniform());
  const double t = rng.uniform(0.0, 2.0 * M_PI);
  return {e.cx + r * e.rx * std::cos(t), e.cy + r * e.ry * std::sin(t)};
}

}  // namespace

Sample synthetic_sample(const SyntheticConfig& config, int label, Rng& rng) {
  const std::size_t h = config.height, w = config.width;
  const double H = static_cast<double>(h), W = static_cast<double>(w);
  const double jx = rng.uniform(-0.03, 0.03) * W, jy = rng.uniform(-0.03, 0.03) * H;
  const Ellipse body{0.5 * W + jx, 0.55 * H + jy, 0.42 * W, 0.46 * H};
  const Ellipse lungs[2] = {{0.31 * W + jx, 0.52 * H + jy, 0.13 * W, 0.28 * H},
                            {0.69 * W + jx, 0.52 * H + jy, 0.13 * W, 0.28 * H}};
  const double body_level = rng.uniform(0.38, 0.46);
  const double lung_level = rng.uniform(0.12, 0.18);

  struct Blob {
    double x, y, sigma;
  };
  std::vector<Blob> blobs;
  const double unit = std::min(H, W);
  if (label == kCovid) {
    for (const Ellipse& l : lungs) {
      const auto [x, y] = point_in(l, 0.6, rng);
      blobs.push_back({x, y, rng.uniform(0.045, 0.06) * unit});
    }
  } else if (label == kPneumonia) {
    const Ellipse& l = lungs[rng.below(2)];
    const auto [x, y] = point_in(l, 0.5, rng);
    blobs.push_back({x, y, rng.uniform(0.075, 0.09) * unit});
  }

  Sample s;
  s.label = label;
  s.image = Tensor<float>::zeros({1, h, w});
  Tensor<float> mask = Tensor<float>::zeros({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double x = static_cast<double>(j), y = static_cast<double>(i);
      double v = 0.04;
      // soft edges: smoothstep over the outer 15% of each ellipse radius
      auto inside = [&](const Ellipse& e) {
        const double r = std::sqrt(e.norm(x, y));
        const double t = std::clamp((1.0 - r) / 0.15, 0.0, 1.0);
        return t * t * (3.0 - 2.0 * t);
      };
      v += (body_level - v) * inside(body);
      double lung = 0.0;
      for (const Ellipse& l : lungs) lung = std::max(lung, inside(l));
      v += (lung_level - v) * lung;
      double lesion = 0.0;
      for (const Blob& b : blobs) {
        const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
        lesion = std::max(lesion, std::exp(-0.5 * d2 / (b.sigma * b.sigma)));
      }
      v += config.lesion_amplitude * lesion;
      v += config.noise_sigma * rng.normal();
      s.image[i * w + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      const bool m = blobs.empty() ? lung > 0.5 : lesion > 0.3;
      mask[i * w + j] = m ? 1.0f : 0.0f;
    }
  }

  if (config.stamps) {
    int text_class = label;
    if (!rng.bernoulli(config.stamp_correlation)) {
      text_class = (label + 1 + static_cast<int>(rng.below(2))) % 3;
    }
    for (const auto& [r, c] : stamp_pixels(kStampTexts[static_cast<std::size_t>(text_class)])) {
      float& px = s.image[(kStampY + r) * w + kStampX + c];
      px = static_cast<float>(std::clamp(static_cast<double>(px) + config.stamp_contrast, 0.0, 1.0));
    }
  }
  s.mask = std::move(mask);
  return s;
}

namespace {

template <class Fn>
void for_each_sample(const SyntheticConfig& config, Fn&& fn) {
  config.validate();
  const Split splits[3] = {Split::kTrain, Split::kVal, Split::kTest};
  for (std::size_t si = 0; si < 3; ++si) {
    const std::size_t n = config.per_class[si];
    for (std::size_t i = 0; i < n; ++i) {
      for (int label = 0; label < 3; ++label) {
        const std::uint64_t stream = (si << 40) ^ (static_cast<std::uint64_t>(label) << 32) ^ i;
        Rng rng(derive_seed(config.seed, stream));
        fn(splits[si], label, i, synthetic_sample(config, label, rng));
      }
    }
  }
}

}  // namespace

Dataset make_synthetic_dataset(const SyntheticConfig& config) {
  Dataset ds;
  for_each_sample(config, [&](Split split, int, std::size_t, Sample s) { ds.add(split, std::move(s)); });
  return ds;
}

std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticConfig& config) {
  namespace fs = std::filesystem;
  DatasetManifest manifest;
  for_each_sample(config, [&](Split split, int label, std::size_t i, const Sample& s) {
    const std::string stem = std::string(kClassNames[static_cast<std::size_t>(label)]) + "_" + std::to_string(i) + ".png";
    const fs::path img = fs::path("images") / std::string(split_name(split)) / stem;
    const fs::path msk = fs::path("masks") / std::string(split_name(split)) / stem;
    fs::create_directories(dir / img.parent_path());
    fs::create_directories(dir / msk.parent_path());
    write_png(dir / img, to_gray_image(s.image));
    write_png(dir / msk, to_gray_image(*s.mask));
    manifest.records.push_back({dir / img, label, split, dir / msk, "synthetic"});
  });
  const fs::path path = dir / "manifest.csv";
  write_manifest(path, manifest);
  return path;
}

}  // namespace robustlens
