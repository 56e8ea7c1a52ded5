#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "robustlens/colormap.hpp"
#include "robustlens/gradcam.hpp"
#include "test_support.hpp"

using namespace robustlens;

namespace {

// conv(1 -> 2, 3x3, pad 1) -> flatten -> dense(2) on a 5x6 input. Class 0
// weighs every position of channel 1 by +1 and of channel 2 by -1; class 1
// reads channel 1 only.
struct HandNet {
  ModelConfig config;
  ModelParams<double> params;
  static constexpr std::size_t H = 5, W = 6;

  HandNet() {
    config.name = "hand";
    config.input = {1, H, W};
    config.num_classes = 2;
    config.layers = {ConvSpec{2, 3, 1, 1}, FlattenSpec{}, DenseSpec{2}};
    params = build(config).cast<double>();
    Rng rng(17);
    for (auto& v : params.get(0, ParamRole::kWeight).data()) v = rng.uniform(-1.0, 1.0);
    params.get(0, ParamRole::kBias)[0] = 0.1;
    params.get(0, ParamRole::kBias)[1] = -0.2;
    Tensor<double>& dense = params.get(2, ParamRole::kWeight);  // 2 x (2*H*W)
    for (std::size_t p = 0; p < H * W; ++p) {
      dense[p] = 1.0;
      dense[H * W + p] = -1.0;
      dense[2 * H * W + p] = 0.5;
      dense[3 * H * W + p] = 0.0;
    }
  }

  // Direct convolution, independent of the library kernels.
  std::vector<double> activation(const Tensor<double>& x, std::size_t ch) const {
    const Tensor<double>& w = params.get(0, ParamRole::kWeight);
    std::vector<double> a(H * W, params.get(0, ParamRole::kBias)[ch]);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const long r = static_cast<long>(i) + di, c = static_cast<long>(j) + dj;
            if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W)) continue;
            a[i * W + j] += x[static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c)] *
                            w[ch * 9 + static_cast<std::size_t>(di + 1) * 3 + static_cast<std::size_t>(dj + 1)];
          }
    return a;
  }
};

Heatmap heatmap_from_values(std::vector<double> v, std::size_t h, std::size_t w) {
  Heatmap hm;
  hm.height = h;
  hm.width = w;
  hm.map = std::move(v);
  return hm;
}

}  // namespace

TEST(GradCam, HandBuiltNetworkGivesAnalyticMap) {
  const HandNet net;
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = rl_test::random_tensor<double>({1, HandNet::H, HandNet::W}, rng, 0.0, 1.0);
    GradCamOptions opts;
    opts.target_class = 0;
    const Heatmap h = gradcam(net.config, net.params, x, opts);
    ASSERT_EQ(h.channel_weights.size(), 2u);
    EXPECT_NEAR(h.channel_weights[0], 1.0, 1e-12);
    EXPECT_NEAR(h.channel_weights[1], -1.0, 1e-12);
    const auto a1 = net.activation(x, 0), a2 = net.activation(x, 1);
    std::vector<double> expect(a1.size());
    for (std::size_t i = 0; i < a1.size(); ++i) expect[i] = std::max(a1[i] - a2[i], 0.0);
    const double peak = *std::max_element(expect.begin(), expect.end());
    ASSERT_GT(peak, 0.0);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(h.map[i], expect[i] / peak, 1e-5);
    EXPECT_EQ(h.layer, "conv1");
  }
}

TEST(GradCam, IgnoredChannelGetsZeroWeight) {
  const HandNet net;
  Rng rng(4);
  const auto x = rl_test::random_tensor<double>({1, HandNet::H, HandNet::W}, rng, 0.0, 1.0);
  GradCamOptions opts;
  opts.target_class = 1;
  const Heatmap h = gradcam(net.config, net.params, x, opts);
  EXPECT_EQ(h.channel_weights[1], 0.0);
  EXPECT_NEAR(h.channel_weights[0], 0.5, 1e-12);
  // one-term sum: map proportional to the positive part of channel 1
  const auto a1 = net.activation(x, 0);
  double peak = 0.0;
  for (double v : a1) peak = std::max(peak, v);
  for (std::size_t i = 0; i < a1.size(); ++i) EXPECT_NEAR(h.map[i], std::max(a1[i], 0.0) / peak, 1e-9);
}

TEST(GradCam, DeadLastConvGivesZeroMapFlag) {
  ModelConfig c = tiny_config(8, 8);
  ModelParams<float> p = build(c);
  const std::size_t last = *conv_layer_index(c, "conv2");
  for (auto& v : p.get(last, ParamRole::kWeight).data()) v = 0.0f;
  for (auto& v : p.get(last, ParamRole::kBias).data()) v = -1.0f;
  Rng rng(1);
  const Heatmap h = gradcam(c, p, rl_test::random_tensor<float>({1, 8, 8}, rng, 0.0, 1.0));
  EXPECT_TRUE(h.zero_map);
  for (double v : h.map) EXPECT_EQ(v, 0.0);
}

TEST(GradCam, NonNegativeAndNormalizedOnRandomNets) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    ModelConfig c = tiny_config(8, 8);
    c.seed = static_cast<std::uint64_t>(trial);
    const ModelParams<float> p = build(c);
    GradCamOptions opts;
    opts.layer = trial % 2 ? "conv1" : "";
    opts.target_class = static_cast<int>(rng.below(3));
    const Heatmap h = gradcam(c, p, rl_test::random_tensor<float>({1, 8, 8}, rng, 0.0, 1.0), opts);
    ASSERT_EQ(h.map.size(), 64u);
    double peak = 0.0;
    for (double v : h.map) {
      ASSERT_GE(v, 0.0);
      peak = std::max(peak, v);
    }
    if (h.zero_map) {
      ASSERT_EQ(peak, 0.0);
    } else {
      ASSERT_DOUBLE_EQ(peak, 1.0);
    }
  }
}

TEST(GradCam, LogitScalingLeavesMapUnchanged) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig c = tiny_config(12, 12);
    c.seed = 500 + static_cast<std::uint64_t>(trial);
    ModelParams<double> p = build(c).cast<double>();
    const auto x = rl_test::random_tensor<double>({1, 12, 12}, rng, 0.0, 1.0);
    GradCamOptions opts;
    opts.target_class = trial % 3;
    const Heatmap base = gradcam(c, p, x, opts);
    Tensor<double>& head = p.get(c.layers.size() - 1, ParamRole::kWeight);
    const std::size_t in = head.dim(1);
    const double lambda = 0.25 + 3.0 * rng.uniform();
    for (std::size_t j = 0; j < in; ++j) head[static_cast<std::size_t>(*opts.target_class) * in + j] *= lambda;
    const Heatmap scaled = gradcam(c, p, x, opts);
    ASSERT_EQ(base.zero_map, scaled.zero_map);
    for (std::size_t i = 0; i < base.map.size(); ++i) EXPECT_NEAR(base.map[i], scaled.map[i], 1e-6);
  }
}

TEST(GradCam, UnknownLayerListsAvailableLayers) {
  const ModelConfig c = tiny_config(8, 8);
  const ModelParams<float> p = build(c);
  GradCamOptions opts;
  opts.layer = "conv9";
  try {
    gradcam(c, p, Tensor<float>({1, 8, 8}), opts);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("conv1, conv2"), std::string::npos) << e.what();
  }
}

TEST(Colormap, EndpointsAndMiddle) {
  EXPECT_EQ(kJetColormap[0], (std::array<std::uint8_t, 3>{0, 0, 128}));
  EXPECT_EQ(kJetColormap[255], (std::array<std::uint8_t, 3>{128, 0, 0}));
  EXPECT_EQ(kJetColormap[128], (std::array<std::uint8_t, 3>{130, 255, 126}));
}

TEST(Overlay, BlendArithmetic) {
  Tensor<float> img({1, 2, 2}, {0.0f, 0.5f, 1.0f, 0.2f});
  Heatmap h = heatmap_from_values({0.0, 0.5, 1.0, 0.0}, 2, 2);
  const RgbImage out = overlay(h, img);
  const std::size_t idx[4] = {0, 128, 255, 0};
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double expect = 0.6 * img[p] * 255.0 + 0.4 * kJetColormap[idx[p]][c];
      EXPECT_EQ(out.pixels[p * 3 + c], static_cast<std::uint8_t>(std::lround(expect))) << p << "," << c;
    }
  EXPECT_THROW(overlay(h, Tensor<float>({1, 3, 2})), ShapeError);
}

TEST(Containment, SimpleCases) {
  const Tensor<float> mask({2, 2}, {1.f, 1.f, 0.f, 0.f});
  SaliencyScore s = score_containment(heatmap_from_values({1.0, 0.5, 0.0, 0.0}, 2, 2), mask);
  EXPECT_DOUBLE_EQ(s.containment, 1.0);
  EXPECT_DOUBLE_EQ(s.top_q_containment, 1.0);
  s = score_containment(heatmap_from_values({1.0, 1.0, 1.0, 1.0}, 2, 2), mask);
  EXPECT_DOUBLE_EQ(s.containment, 0.5);
  s = score_containment(heatmap_from_values({0.0, 0.0, 0.0, 0.0}, 2, 2), mask);
  EXPECT_TRUE(s.zero_mass);
  EXPECT_EQ(s.containment, 0.0);
  EXPECT_THROW(score_containment(heatmap_from_values({1.0}, 1, 1), mask), ShapeError);
}

TEST(Containment, MatchesBruteForceAndIsMonotone) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 10 + rng.below(90);
    std::vector<double> v(n);
    std::vector<float> m(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = rng.uniform();
      m[i] = rng.bernoulli(0.4) ? 1.0f : 0.0f;
    }
    m[0] = 1.0f;
    double in = 0.0, tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      tot += v[i];
      if (m[i] == 1.0f) in += v[i];
    }
    const SaliencyScore s = score_containment(v, m);
    EXPECT_NEAR(s.containment, in / tot, 1e-12);
    // top-q: ceil(0.2 n) largest values
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
    const std::size_t top = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n) - 1e-9));
    std::size_t hits = 0;
    for (std::size_t r = 0; r < top; ++r) hits += m[order[r]] == 1.0f;
    EXPECT_NEAR(s.top_q_containment, static_cast<double>(hits) / static_cast<double>(top), 1e-12);

    std::vector<double> more = v;
    more[0] += rng.uniform(0.0, 2.0);
    EXPECT_GE(score_containment(more, m).containment, s.containment);
  }
}

TEST(Stamp, BoundsAndSensitivity) {
  const ModelConfig c = tiny_config(16, 16);
  Model m{c, build(c)};
  const std::size_t last = *conv_layer_index(c, "conv2");
  Rng rng(2);
  const auto img = rl_test::random_tensor<float>({1, 16, 16}, rng, 0.0, 0.5);
  const Tensor<float> mask = Tensor<float>::full({16, 16}, 1.0f);
  TextStamp st;
  st.x = 14;
  EXPECT_THROW(burn_stamp(img, st), ConfigError);
  st.x = 1;
  st.y = 1;
  st.text = "RL";
  const Tensor<float> stamped = burn_stamp(img, st);
  EXPECT_EQ(stamped[1 * 16 + 1], 1.0f);  // top-left stroke of R
  EXPECT_EQ(stamped[0], img[0]);
  const AnnotationSensitivity a = annotation_sensitivity(m, img, mask, st);
  EXPECT_GE(a.stamp_mass_before, 0.0);
  EXPECT_GE(a.stamp_mass_after, 0.0);

  // all-zero heatmap model: nothing moves
  for (auto& v : m.params.get(last, ParamRole::kWeight).data()) v = 0.0f;
  for (auto& v : m.params.get(last, ParamRole::kBias).data()) v = -1.0f;
  const AnnotationSensitivity z = annotation_sensitivity(m, img, mask, st);
  EXPECT_EQ(z.containment_delta, 0.0);
  EXPECT_EQ(z.stamp_mass_after, 0.0);
}
