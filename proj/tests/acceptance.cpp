// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion; exits
// non-zero when any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "robustlens/adversarial.hpp"
#include "robustlens/gradcam.hpp"
#include "robustlens/metrics.hpp"
#include "robustlens/ops.hpp"
#include "robustlens/optim.hpp"
#include "robustlens/synthetic.hpp"
#include "robustlens/trainer.hpp"

using namespace robustlens;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

template <class T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// ---------------------------------------------------------------- 1

using Loss = std::function<Var<double>(Graph<double>&, Var<double>)>;

// Reverse-mode gradient vs central differences at `point`; max over
// coordinates of |a - n| / max(1, |a|, |n|).
double fd_error(const Loss& f, Tensor<double> point, double h = 1e-6) {
  Tensor<double> x = point;
  x.set_requires_grad(true);
  {
    Graph<double> g;
    g.backward(f(g, g.leaf(x)));
  }
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  auto eval = [&](const Tensor<double>& p) {
    Graph<double> g;
    return f(g, g.constant_ref(p)).value()[0];
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    Tensor<double> up = point, dn = point;
    up[i] += h;
    dn[i] -= h;
    const double num = (eval(up) - eval(dn)) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - num) / std::max({1.0, std::abs(analytic[i]), std::abs(num)}));
  }
  return worst;
}

// Random linear functional of any tensor, so every output entry gets a
// distinct upstream gradient.
Var<double> project(Graph<double>& g, Var<double> v, std::uint64_t seed) {
  Var<double> flat = v.shape().size() == 2 ? v : flatten(v);
  Rng rng(seed);
  Tensor<double> r = random_tensor<double>({flat.shape()[1], 1}, rng);
  return sum(matmul(flat, g.input(std::move(r))));
}

// Full tiny-model loss, differentiated with respect to every parameter and
// the input image at once by packing them into one vector.
double model_fd_error(std::uint64_t seed) {
  ModelConfig c = tiny_config(8, 8);
  c.seed = seed;
  const ModelParams<double> base = build(c).cast<double>();
  Rng rng(seed + 1000);
  const Tensor<double> image = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);
  const std::vector<int> labels{static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
  std::size_t total = image.numel();
  for (const auto& e : base.entries) total += e.tensor.numel();

  auto unpack = [&](const Tensor<double>& packed, ModelParams<double>& p, Tensor<double>& img) {
    std::size_t k = 0;
    for (auto& e : p.entries)
      for (auto& v : e.tensor.data()) v = packed[k++];
    for (auto& v : img.data()) v = packed[k++];
  };
  Tensor<double> packed({total});
  {
    std::size_t k = 0;
    for (const auto& e : base.entries)
      for (double v : e.tensor.data()) packed[k++] = v;
    for (double v : image.data()) packed[k++] = v;
  }
  auto loss_value = [&](const Tensor<double>& pk) {
    ModelParams<double> p = base;
    Tensor<double> img = image;
    unpack(pk, p, img);
    Graph<double> g;
    const ModelParams<double>& cp = p;
    return softmax_cross_entropy(forward(g, c, cp, g.constant_ref(img)).logits, labels).value()[0];
  };
  ModelParams<double> p = base;
  Tensor<double> img = image;
  for (auto& e : p.entries) e.tensor.set_requires_grad(true);
  img.set_requires_grad(true);
  {
    Graph<double> g;
    g.backward(softmax_cross_entropy(forward(g, c, p, g.leaf(img)).logits, labels));
  }
  std::vector<double> analytic;
  for (const auto& e : p.entries) analytic.insert(analytic.end(), e.tensor.grad().begin(), e.tensor.grad().end());
  analytic.insert(analytic.end(), img.grad().begin(), img.grad().end());

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    Tensor<double> up = packed, dn = packed;
    up[i] += h;
    dn[i] -= h;
    const double num = (loss_value(up) - loss_value(dn)) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - num) / std::max({1.0, std::abs(analytic[i]), std::abs(num)}));
  }
  return worst;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const auto x = random_tensor<double>({2, 2, 6, 5}, rng);
    const auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    const auto a = random_tensor<double>({3, 4}, rng);
    const auto b = random_tensor<double>({4, 5}, rng);
    const auto bt = random_tensor<double>({5, 4}, rng);
    const auto bias = random_tensor<double>({2}, rng);
    const AffineMatrix m{0.8 + 0.1 * rng.uniform(), -0.3, 1.1, 0.35, 0.9, -0.4 + 0.1 * rng.uniform()};
    const std::vector<int> labels{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4)),
                                  static_cast<int>(rng.below(4))};
    const std::vector<std::pair<std::string, std::function<double()>>> checks{
        {"conv2d/x", [&] { return fd_error([&](auto& g, auto v) { return project(g, conv2d(v, g.constant_ref(w), {1, 1}), s); }, x); }},
        {"conv2d/w", [&] { return fd_error([&](auto& g, auto v) { return project(g, conv2d(g.constant_ref(x), v, {2, 0}), s); }, w); }},
        {"matmul/a", [&] { return fd_error([&](auto& g, auto v) { return project(g, matmul(v, g.constant_ref(b)), s); }, a); }},
        {"matmul/b", [&] { return fd_error([&](auto& g, auto v) { return project(g, matmul(g.constant_ref(a), v), s); }, b); }},
        {"matmul/bT", [&] { return fd_error([&](auto& g, auto v) { return project(g, matmul(g.constant_ref(a), v, true), s); }, bt); }},
        {"add", [&] { return fd_error([&](auto& g, auto v) { return project(g, add(v, g.constant_ref(a)), s); }, a); }},
        {"add_bias", [&] { return fd_error([&](auto& g, auto v) { return project(g, add_bias(g.constant_ref(x), v), s); }, bias); }},
        {"relu", [&] { return fd_error([&](auto& g, auto v) { return project(g, relu(v), s); }, x); }},
        {"maxpool2d", [&] { return fd_error([&](auto& g, auto v) { return project(g, maxpool2d(v, 2), s); }, x); }},
        {"flatten", [&] { return fd_error([&](auto& g, auto v) { return project(g, flatten(v), s); }, x); }},
        {"scale", [&] { return fd_error([&](auto& g, auto v) { return project(g, scale(v, -1.7), s); }, x); }},
        {"sum", [&] { return fd_error([&](auto&, auto v) { return sum(v); }, x); }},
        {"softmax_ce", [&] { return fd_error([&](auto&, auto v) { return softmax_cross_entropy(v, labels); }, a); }},
        {"affine_sample", [&] { return fd_error([&](auto& g, auto v) { return project(g, affine_sample(v, m), s); }, x); }},
        {"tiny model loss", [&] { return model_fd_error(s); }},
    };
    for (const auto& [name, check] : checks) worst[name] = std::max(worst[name], check());
  }
  Outcome o;
  double overall = 0.0;
  std::string failed;
  for (const auto& [name, e] : worst) {
    overall = std::max(overall, e);
    if (!(e < 1e-4)) failed += " " + name;
  }
  const double secs = seconds_since(t0);
  o.pass = failed.empty() && secs < 60.0;
  o.detail = fmt("max rel err %.2e over %g ops x 20 seeds, %.1fs", overall, static_cast<double>(worst.size()), secs);
  if (!failed.empty()) o.detail += "; failing:" + failed;
  return o;
}

// ---------------------------------------------------------------- 2

Outcome criterion2() {
  std::size_t violations = 0, identity_failures = 0;
  double max_dev_ratio = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng rng(s * 7919 + 1);
    ModelConfig c = tiny_config(16, 16);
    c.seed = s;
    const Model m{c, build(c)};
    Tensor<float> x = random_tensor<float>({1, 1, 16, 16}, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < x.numel(); i += 11) x[i] = rng.bernoulli(0.5) ? 0.0f : 1.0f;  // saturated pixels
    const std::vector<int> y{static_cast<int>(rng.below(3))};
    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.0, 0.2);
    const PerturbedBatch adv = fgsm(m, x, y, cfg);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double dev = std::abs(static_cast<double>(adv.images[i]) - static_cast<double>(x[i]));
      if (dev > cfg.epsilon || adv.images[i] < 0.0f || adv.images[i] > 1.0f) ++violations;
      if (cfg.epsilon > 0) max_dev_ratio = std::max(max_dev_ratio, dev / cfg.epsilon);
    }
    cfg.epsilon = 0.0;
    const PerturbedBatch same = fgsm(m, x, y, cfg);
    if (std::memcmp(same.images.data().data(), x.data().data(), x.numel() * sizeof(float)) != 0) ++identity_failures;
  }
  Outcome o;
  o.pass = violations == 0 && identity_failures == 0;
  o.detail = fmt("1000 draws: %g budget/range violations, %g non-identical eps=0 results, max |dx|/eps %.9f",
                 static_cast<double>(violations), static_cast<double>(identity_failures), max_dev_ratio);
  return o;
}

// ---------------------------------------------------------------- 3, 4, 8

struct TwinResult {
  RoundResult standard, robust;
  double standard_secs = 0, robust_secs = 0;
  std::size_t compared = 0;
  double stamp_mass[2] = {0, 0};
  double containment[2] = {0, 0};
};

constexpr int kToySeeds = 5;

SyntheticConfig toy_data(int seed) {
  SyntheticConfig sc;
  sc.per_class = {200, 16, 32};
  sc.lesion_amplitude = 0.5;
  sc.stamps = true;
  sc.stamp_contrast = 0.06;
  sc.seed = 100 + static_cast<std::uint64_t>(seed);
  return sc;
}

RunConfig toy_run(int seed, bool adversarial) {
  RunConfig rc;
  rc.model = tiny_config(32, 32);
  rc.augmentation.reset();
  rc.attack = AttackConfig{};
  rc.attack->epsilon = 0.02;
  rc.learning_rate = 3e-3;
  rc.max_epochs = 100;
  rc.early_stop_patience = 15;
  rc.rounds = 1;
  rc.seed = static_cast<std::uint64_t>(seed);
  rc.adversarial = adversarial;
  return rc;
}

TwinResult run_twins(int seed) {
  TwinResult r;
  const SyntheticConfig sc = toy_data(seed);
  const Dataset ds = make_synthetic_dataset(sc);
  auto t0 = Clock::now();
  r.standard = train_round(toy_run(seed, false), ds, 0);
  r.standard_secs = seconds_since(t0);
  t0 = Clock::now();
  r.robust = train_round(toy_run(seed, true), ds, 0);
  r.robust_secs = seconds_since(t0);

  // Saliency on covid test images that both twins classify correctly.
  const std::size_t sw = TextStamp{kStampX, kStampY, kStampTexts[kCovid]}.width();
  const std::size_t sh = TextStamp{}.height();
  for (const Sample& s : ds.split(Split::kTest)) {
    if (s.label != kCovid || !s.mask) continue;
    const Heatmap hs = gradcam(r.standard.model, s.image);
    const Heatmap hr = gradcam(r.robust.model, s.image);
    if (hs.predicted_class != s.label || hr.predicted_class != s.label) continue;
    ++r.compared;
    const Heatmap* maps[2] = {&hs, &hr};
    for (int k = 0; k < 2; ++k) {
      r.stamp_mass[k] += region_mass(*maps[k], kStampX, kStampY, sw, sh);
      r.containment[k] += score_containment(*maps[k], *s.mask).containment;
    }
  }
  if (r.compared) {
    for (int k = 0; k < 2; ++k) {
      r.stamp_mass[k] /= static_cast<double>(r.compared);
      r.containment[k] /= static_cast<double>(r.compared);
    }
  }
  std::printf("  toy seed %d: standard clean %.3f perturbed %.3f (%.0fs) | robust clean %.3f perturbed %.3f (%.0fs)\n",
              seed, r.standard.record.test.accuracy, r.standard.record.test_perturbed->accuracy, r.standard_secs,
              r.robust.record.test.accuracy, r.robust.record.test_perturbed->accuracy, r.robust_secs);
  std::printf("    %zu images: stamp mass %.3e -> %.3e, containment %.4f -> %.4f\n", r.compared, r.stamp_mass[0],
              r.stamp_mass[1], r.containment[0], r.containment[1]);
  std::fflush(stdout);
  return r;
}

std::vector<TwinResult>& twins(int count) {
  static std::vector<TwinResult> cache;
  while (static_cast<int>(cache.size()) < count) cache.push_back(run_twins(static_cast<int>(cache.size())));
  return cache;
}

Outcome criterion3() {
  const TwinResult& t = twins(1)[0];
  const double clean = t.standard.record.test.accuracy, pert = t.standard.record.test_perturbed->accuracy;
  Outcome o;
  o.pass = pert < clean && clean - pert >= 0.10 && t.standard_secs < 600.0;
  o.detail = fmt("standard twin clean %.3f, eps=0.02 %.3f, gap %.1f pts, %.0fs", clean, pert, 100 * (clean - pert),
                 t.standard_secs);
  return o;
}

Outcome criterion4() {
  const TwinResult& t = twins(1)[0];
  const double sc = t.standard.record.test.accuracy, sp = t.standard.record.test_perturbed->accuracy;
  const double rc = t.robust.record.test.accuracy, rp = t.robust.record.test_perturbed->accuracy;
  const double secs = t.standard_secs + t.robust_secs;
  Outcome o;
  o.pass = rp - sp >= 0.15 && std::abs(rc - sc) <= 0.05 && secs < 1200.0;
  o.detail = fmt("perturbed gain %.1f pts, clean difference %.1f pts, %.0fs", 100 * (rp - sp), 100 * (rc - sc), secs);
  return o;
}

Outcome criterion8() {
  const auto& all = twins(kToySeeds);
  int good = 0;
  for (const TwinResult& t : all) {
    if (t.compared > 0 && t.stamp_mass[1] <= t.stamp_mass[0] && t.containment[1] >= t.containment[0]) ++good;
  }
  Outcome o;
  o.pass = good >= 4;
  o.detail = fmt("robust twin less stamp-focused and at least as lesion-contained in %g of %g seeds",
                 static_cast<double>(good), static_cast<double>(kToySeeds));
  return o;
}

// ---------------------------------------------------------------- 5

Outcome criterion5() {
  const auto t0 = Clock::now();
  std::vector<std::string> failed;

  PlateauState p;
  double lr = 1e-4;
  std::vector<double> trace;
  for (int e = 0; e < 3; ++e) {
    plateau_update(p, 1.0, lr);
    trace.push_back(lr);
  }
  if (!(trace[0] == 1e-4 && trace[1] == 1e-4 && std::abs(trace[2] - 2e-5) < 1e-18)) failed.push_back("plateau");

  EarlyStopState<int> es;
  std::size_t halted_at = 0;
  early_stop_update(es, 0.5, 1);
  for (int e = 2; e <= 40 && !halted_at; ++e) {
    if (early_stop_update(es, 0.6, e).halt) halted_at = static_cast<std::size_t>(e);
  }
  if (halted_at != 16 || es.stale != 15) failed.push_back("early stop");

  EarlyStopState<int> best;
  const double losses[] = {3.0, 2.0, 1.0, 1.5, 1.2, 2.5};
  for (int e = 0; e < 6; ++e) early_stop_update(best, losses[e], e + 1);
  if (best.best_epoch != 3 || *best.best_snapshot != 3) failed.push_back("best snapshot");

  AdamState adam;
  adam.learning_rate = 1e-3;
  std::vector<float> theta{0.4f, -0.7f};
  const std::vector<float> grad{0.25f, -2.0f};
  std::vector<std::span<float>> ps{theta};
  std::vector<std::span<const float>> gs{grad};
  adam_step(ps, gs, adam);
  // m = 0.1 g, v = 0.001 g^2, bias corrections 0.1 and 0.001
  bool adam_ok = true;
  const double th0[] = {0.4, -0.7};
  for (int i = 0; i < 2; ++i) {
    const double g = grad[static_cast<std::size_t>(i)];
    const double m = 0.1 * g, v = 0.001 * g * g;
    const double expect = static_cast<float>(th0[i]) - 1e-3 * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
    adam_ok = adam_ok && std::abs(theta[static_cast<std::size_t>(i)] - expect) < 1e-7;
  }
  if (!adam_ok) failed.push_back("adam");

  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failed.empty() && secs < 10.0;
  o.detail = failed.empty() ? fmt("plateau 1e-4 -> 2e-5, halt at stale 15, best epoch 3, adam step ok, %.3fs", secs)
                            : "failing:";
  for (const auto& f : failed) o.detail += " " + f;
  return o;
}

// ---------------------------------------------------------------- 6

Outcome criterion6() {
  const auto t0 = Clock::now();
  Rng rng(6);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + rng.below(5);
    const std::size_t n = 1 + rng.below(300);
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(k));
      p[i] = static_cast<int>(rng.below(k));
    }
    const ConfusionMatrix cm = confusion(y, p, k);
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t q = 0; q < k; ++q) {
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) count += y[i] == static_cast<int>(t) && p[i] == static_cast<int>(q);
        mismatches += cm.at(t, q) != count;
      }
  }
  int covered = 0;
  for (int s = 0; s < 1000; ++s) {
    const std::size_t rounds = 2 + rng.below(9);
    std::vector<double> v(rounds);
    for (double& x : v) x = 0.85 + 0.04 * rng.normal();
    const MeanInterval m = mean_interval(v);
    covered += std::abs(m.mean - 0.85) <= m.half_width;
  }
  const double coverage = covered / 1000.0, secs = seconds_since(t0);
  Outcome o;
  o.pass = mismatches == 0 && std::abs(coverage - 0.95) <= 0.02 && secs < 60.0;
  o.detail = fmt("500 matrices, %g mismatched cells; CI coverage %.3f over 1000 simulations, %.1fs",
                 static_cast<double>(mismatches), coverage, secs);
  return o;
}

// ---------------------------------------------------------------- 7

Outcome criterion7() {
  // conv(1 -> 2, 3x3, pad 1) -> flatten -> dense(2). Class 0 weighs channel 1
  // by +1 and channel 2 by -1 everywhere, so alpha = (+1, -1) and the map is
  // relu(A1 - A2) / max.
  constexpr std::size_t H = 5, W = 6;
  ModelConfig hc;
  hc.name = "hand";
  hc.input = {1, H, W};
  hc.num_classes = 2;
  hc.layers = {ConvSpec{2, 3, 1, 1}, FlattenSpec{}, DenseSpec{2}};
  ModelParams<double> hp = build(hc).cast<double>();
  Rng rng(70);
  for (auto& v : hp.get(0, ParamRole::kWeight).data()) v = rng.uniform(-1.0, 1.0);
  hp.get(0, ParamRole::kBias)[0] = 0.1;
  hp.get(0, ParamRole::kBias)[1] = -0.2;
  Tensor<double>& dense = hp.get(2, ParamRole::kWeight);
  for (std::size_t q = 0; q < H * W; ++q) {
    dense[q] = 1.0;
    dense[H * W + q] = -1.0;
    dense[2 * H * W + q] = 0.5;
    dense[3 * H * W + q] = 0.0;
  }
  const Tensor<double>& kw = hp.get(0, ParamRole::kWeight);
  double analytic_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor<double>({1, H, W}, rng, 0.0, 1.0);
    std::vector<double> expect(H * W);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double a[2] = {0.1, -0.2};
        for (std::size_t ch = 0; ch < 2; ++ch)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const long r = static_cast<long>(i) + di, c = static_cast<long>(j) + dj;
              if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W)) continue;
              a[ch] += x[static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c)] *
                       kw[ch * 9 + static_cast<std::size_t>(di + 1) * 3 + static_cast<std::size_t>(dj + 1)];
            }
        expect[i * W + j] = std::max(a[0] - a[1], 0.0);
      }
    const double peak = *std::max_element(expect.begin(), expect.end());
    GradCamOptions opts;
    opts.target_class = 0;
    const Heatmap h = gradcam(hc, hp, x, opts);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      const double e = peak > 0 ? expect[i] / peak : 0.0;
      analytic_err = std::max(analytic_err, std::abs(h.map[i] - e));
    }
  }

  std::size_t property_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ModelConfig c = tiny_config(12, 12);
    c.seed = static_cast<std::uint64_t>(trial);
    const ModelParams<float> p = build(c);
    GradCamOptions opts;
    opts.layer = trial % 2 ? "conv1" : "conv2";
    opts.target_class = static_cast<int>(rng.below(3));
    const Heatmap h = gradcam(c, p, random_tensor<float>({1, 12, 12}, rng, 0.0, 1.0), opts);
    double peak = 0.0, low = 0.0;
    for (double v : h.map) {
      peak = std::max(peak, v);
      low = std::min(low, v);
    }
    const bool normalized = h.zero_map ? peak == 0.0 : std::abs(peak - 1.0) < 1e-12;
    property_failures += !(low >= 0.0 && peak <= 1.0 && normalized);
  }

  double scale_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig c = tiny_config(12, 12);
    c.seed = 5000 + static_cast<std::uint64_t>(trial);
    ModelParams<double> p = build(c).cast<double>();
    const auto x = random_tensor<double>({1, 12, 12}, rng, 0.0, 1.0);
    GradCamOptions opts;
    opts.target_class = trial % 3;
    const Heatmap base = gradcam(c, p, x, opts);
    Tensor<double>& head = p.get(c.layers.size() - 1, ParamRole::kWeight);
    const std::size_t in = head.dim(1);
    const double lambda = 0.1 + 5.0 * rng.uniform();
    for (std::size_t j = 0; j < in; ++j) head[static_cast<std::size_t>(*opts.target_class) * in + j] *= lambda;
    const Heatmap scaled = gradcam(c, p, x, opts);
    for (std::size_t i = 0; i < base.map.size(); ++i) scale_err = std::max(scale_err, std::abs(base.map[i] - scaled.map[i]));
  }

  Outcome o;
  o.pass = analytic_err <= 1e-5 && property_failures == 0 && scale_err <= 1e-6;
  o.detail = fmt("analytic max err %.2e, %g of 1000 random maps violate range/normalization, scaling max diff %.2e",
                 analytic_err, static_cast<double>(property_failures), scale_err);
  return o;
}

// ---------------------------------------------------------------- 9

Sample random_sample(Rng& rng, std::size_t h, std::size_t w) {
  Sample s;
  s.image = random_tensor<float>({1, h, w}, rng, 0.0, 1.0);
  Tensor<float> m({h, w});
  for (auto& v : m.data()) v = rng.bernoulli(0.3) ? 1.0f : 0.0f;
  s.mask = std::move(m);
  return s;
}

Outcome criterion9() {
  Rng rng(9);
  std::size_t identity_diffs = 0, rotation_diffs = 0, range_violations = 0;
  const AugmentationConfig id = AugmentationConfig::identity();
  for (int trial = 0; trial < 200; ++trial) {
    const Sample s = random_sample(rng, 10 + rng.below(8), 10 + rng.below(8));
    const Sample a = augment(s, id, rng);
    for (std::size_t i = 0; i < s.image.numel(); ++i) identity_diffs += a.image[i] != s.image[i];
    for (std::size_t i = 0; i < s.mask->numel(); ++i) identity_diffs += (*a.mask)[i] != (*s.mask)[i];

    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    AffineDraw d;
    d.rotation_deg = 180.0;
    const Sample r = apply_affine(s, inverse_affine(d, h, w));
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t src = (h - 1 - i) * w + (w - 1 - j);
        rotation_diffs += r.image[i * w + j] != s.image[src];
        rotation_diffs += (*r.mask)[i * w + j] != (*s.mask)[src];
      }
  }
  const AugmentationConfig train_aug;
  for (int draw = 0; draw < 10000; ++draw) {
    Sample s = random_sample(rng, 16, 16);
    for (std::size_t i = 0; i < s.image.numel(); i += 5) s.image[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    const Sample a = augment(s, train_aug, rng);
    for (float v : a.image.data()) range_violations += !(v >= 0.0f && v <= 1.0f);
  }
  Outcome o;
  o.pass = identity_diffs == 0 && rotation_diffs == 0 && range_violations == 0;
  o.detail = fmt("identity diffs %g, half-turn diffs %g, out-of-range pixels over 10000 draws %g",
                 static_cast<double>(identity_diffs), static_cast<double>(rotation_diffs),
                 static_cast<double>(range_violations));
  return o;
}

// ---------------------------------------------------------------- 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int shell(const std::string& cmd) {
  return std::system((cmd + " > /dev/null 2>&1").c_str());
}

Outcome criterion10() {
  const fs::path root = fs::temp_directory_path() / "robustlens_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  Outcome o;
  if (shell(std::string(ROBUSTLENS_SYNTH_PATH) + " --output " + (root / "data").string() + " --seed 4") != 0) {
    o.pass = false;
    o.detail = "make_synthetic failed";
    return o;
  }
  const nlohmann::json cfg = {{"name", "tiny"},
                              {"model", "tiny"},
                              {"image_size", {32, 32}},
                              {"manifest", "data/manifest.csv"},
                              {"rounds", 2},
                              {"max_epochs", 3},
                              {"batch_size", 16},
                              {"seed", 11},
                              {"attack", {{"epsilon", 0.02}}}};
  std::ofstream(root / "run.json") << cfg.dump(2);
  const std::string base = std::string(ROBUSTLENS_CLI_PATH) + " train --config " + (root / "run.json").string();
  // different worker counts must not matter either
  const int a = shell("ROBUSTLENS_THREADS=1 " + base + " --output " + (root / "a").string());
  const int b = shell("ROBUSTLENS_THREADS=2 " + base + " --output " + (root / "b").string());
  if (a != 0 || b != 0) {
    o.pass = false;
    o.detail = "train exited with a non-zero status";
    return o;
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file() || entry.path().filename() == "config.json") continue;
    const fs::path rel = fs::relative(entry.path(), root / "a");
    ++compared;
    if (!fs::exists(root / "b" / rel) || slurp(entry.path()) != slurp(root / "b" / rel)) ++differing;
  }
  o.pass = differing == 0 && compared >= 6;
  o.detail = fmt("%g checkpoint/record/report files compared, %g differ", static_cast<double>(compared),
                 static_cast<double>(differing));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("criterion %2d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
