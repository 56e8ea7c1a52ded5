#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "robustlens/adversarial.hpp"
#include "test_support.hpp"

using namespace robustlens;

namespace {

Model small_model(std::uint64_t seed) {
  ModelConfig c = tiny_config(12, 12);
  c.seed = seed;
  return {c, build(c)};
}

}  // namespace

TEST(Fgsm, RespectsBudgetAndRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Model m = small_model(seed);
    Tensor<float> x = rl_test::random_tensor<float>({4, 1, 12, 12}, rng, 0.0, 1.0);
    x[0] = 0.0f;
    x[1] = 1.0f;
    const std::vector<int> y{0, 1, 2, 1};
    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.0, 0.1);
    const PerturbedBatch adv = fgsm(m, x, y, cfg);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      ASSERT_LE(std::abs(static_cast<double>(adv.images[i]) - static_cast<double>(x[i])), cfg.epsilon);
      ASSERT_GE(adv.images[i], 0.0f);
      ASSERT_LE(adv.images[i], 1.0f);
      ASSERT_EQ(adv.perturbation[i], adv.images[i] - x[i]);
    }
  }
}

TEST(Fgsm, ZeroEpsilonIsBitwiseIdentity) {
  Rng rng(3);
  const Model m = small_model(3);
  const auto x = rl_test::random_tensor<float>({3, 1, 12, 12}, rng, 0.0, 1.0);
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  const PerturbedBatch adv = fgsm(m, x, std::vector<int>{0, 1, 2}, cfg);
  EXPECT_EQ(std::memcmp(adv.images.data().data(), x.data().data(), x.numel() * sizeof(float)), 0);
}

TEST(Fgsm, StepFollowsGradientSign) {
  Rng rng(5);
  const Model m = small_model(5);
  const auto x = rl_test::random_tensor<float>({2, 1, 12, 12}, rng, 0.2, 0.8);
  const std::vector<int> y{1, 2};
  const Tensor<float> g = input_gradient(m, x, y);
  AttackConfig cfg;
  cfg.epsilon = 0.02;
  const PerturbedBatch adv = fgsm(m, x, y, cfg);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(adv.images[i]) - x[i];
    if (g[i] > 0) {
      EXPECT_NEAR(d, 0.02, 1e-6);
    } else if (g[i] < 0) {
      EXPECT_NEAR(d, -0.02, 1e-6);
    } else {
      EXPECT_EQ(d, 0.0);
    }
  }
}

TEST(Fgsm, InputGradientMatchesFiniteDifferences) {
  Rng rng(6);
  const Model m = small_model(6);
  const auto x = rl_test::random_tensor<float>({1, 1, 12, 12}, rng, 0.2, 0.8);
  const std::vector<int> y{2};
  const Tensor<float> g = input_gradient(m, x, y);
  const auto pd = m.params.cast<double>();
  auto loss = [&](const Tensor<double>& xd) {
    Graph<double> gr;
    return softmax_cross_entropy(forward(gr, m.config, pd, gr.constant_ref(xd)).logits, y).value()[0];
  };
  const Tensor<double> xd = x.cast<double>();
  for (std::size_t i = 0; i < x.numel(); i += 7) {
    Tensor<double> up = xd, dn = xd;
    up[i] += 1e-5;
    dn[i] -= 1e-5;
    const double num = (loss(up) - loss(dn)) / 2e-5;
    EXPECT_NEAR(g[i], num, 1e-4 * std::max(1.0, std::abs(num)));
  }
}

TEST(Fgsm, IncreasesLossAndLeavesModelUntouched) {
  Rng rng(9);
  const Model m = small_model(9);
  const ModelParams<float> before = m.params;
  const auto x = rl_test::random_tensor<float>({8, 1, 12, 12}, rng, 0.1, 0.9);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
  AttackConfig cfg;
  cfg.epsilon = 0.01;
  const PerturbedBatch adv = fgsm(m, x, y, cfg);
  auto loss = [&](const Tensor<float>& imgs) {
    Graph<float> g;
    return softmax_cross_entropy(g.constant_ref(predict(m, imgs)), y).value()[0];
  };
  EXPECT_GT(loss(adv.images), loss(x));
  EXPECT_EQ(m.params, before);
  for (const auto& e : m.params.entries) EXPECT_FALSE(e.tensor.has_grad());
}

TEST(Fgsm, ConfigValidation) {
  AttackConfig c;
  c.epsilon = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.clip_lo = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  const AttackConfig d;
  EXPECT_EQ(to_json(attack_from_json(to_json(d))), to_json(d));
}

TEST(AdversarialTraining, StepUpdatesParameters) {
  Rng rng(11);
  Model m = small_model(11);
  const ModelParams<float> before = m.params;
  const auto x = rl_test::random_tensor<float>({4, 1, 12, 12}, rng, 0.0, 1.0);
  AdamState adam;
  const float loss = adversarial_train_step(m, x, std::vector<int>{0, 1, 2, 0}, adam, AttackConfig{});
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GT(loss, 0.0f);
  EXPECT_FALSE(m.params == before);
  EXPECT_EQ(adam.step, 1u);
}
