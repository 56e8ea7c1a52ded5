#pragma once

#include <functional>

#include "robustlens/graph.hpp"

namespace robustlens {

/// Scalar-valued function of one tensor, expressed on a graph.
using ScalarFn = std::function<Var<double>(Graph<double>&, Var<double>)>;

/// Max over coordinates of |analytic - central difference| /
/// max(1, |analytic|, |numeric|). Throws NumericalError if any evaluation is
/// non-finite.
double gradient_check(const ScalarFn& f, const Tensor<double>& point, double step = 1e-5);

}  // namespace robustlens
