#include "robustlens/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace robustlens {
namespace {

double evaluate(const ScalarFn& f, const Tensor<double>& at) {
  Graph<double> g;
  const Var<double> out = f(g, g.constant_ref(at));
  if (out.value().numel() != 1) {
    throw ShapeError("gradient_check: function must be scalar-valued, got " +
                     shape_str(out.shape()));
  }
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericalError("gradient_check: non-finite function value");
  return v;
}

}  // namespace

double gradient_check(const ScalarFn& f, const Tensor<double>& point, double step) {
  if (!point.all_finite()) throw NumericalError("gradient_check: non-finite point");

  std::vector<double> analytic(point.numel(), 0.0);
  {
    Graph<double> g;
    const Var<double> x = g.input(point, /*requires_grad=*/true);
    const Var<double> out = f(g, x);
    g.backward(out);
    const auto gx = g.grad(x);
    if (!gx.empty()) std::copy(gx.begin(), gx.end(), analytic.begin());
  }

  double worst = 0.0;
  Tensor<double> probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const double orig = point[i];
    probe[i] = orig + step;
    const double up = evaluate(f, probe);
    probe[i] = orig - step;
    const double down = evaluate(f, probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace robustlens
