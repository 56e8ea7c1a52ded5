#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "robustlens/graph.hpp"

namespace robustlens {

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// 2x3 affine map from output pixel (x, y, 1) to source pixel coordinates.
/// Pixel centers sit at integer coordinates.
using AffineMatrix = std::array<double, 6>;

// Every op validates shapes and throws ShapeError naming the op and the
// offending extents. Outputs are recorded on the inputs' graph.

/// x: N x C x H x W, w: F x C x K x K -> N x F x H' x W'.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Conv2dAttrs attrs = {});

/// a: M x K, b: K x N (or N x K when transpose_b) -> M x N.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false);

/// Elementwise sum of equal shapes.
template <class T>
Var<T> add(Var<T> a, Var<T> b);

/// Adds b[c] along dimension 1 of x (N x C or N x C x H x W).
template <class T>
Var<T> add_bias(Var<T> x, Var<T> b);

template <class T>
Var<T> relu(Var<T> x);

/// Non-overlapping window x window max pooling; trailing rows/cols that do not
/// fill a window are dropped. Ties route the gradient to the first maximum.
template <class T>
Var<T> maxpool2d(Var<T> x, std::size_t window);

/// N x ... -> N x prod(...).
template <class T>
Var<T> flatten(Var<T> x);

/// Mean over the batch of -log softmax(logits)[label]; logits N x K.
/// Computed with the log-sum-exp shift.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

template <class T>
Var<T> scale(Var<T> x, T factor);

/// Sum of all elements -> shape [1].
template <class T>
Var<T> sum(Var<T> x);

/// Bilinear resampling of every N x C plane through `m` with zero fill
/// outside the source.
template <class T>
Var<T> affine_sample(Var<T> x, const AffineMatrix& m);

// Graph-free kernels shared with the data pipeline.

/// Bilinear sample of an H x W plane at (x, y); zero outside.
template <class T>
T bilinear_at(std::span<const T> plane, std::size_t h, std::size_t w, double x, double y);

/// Softmax of each row of an N x K matrix.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace robustlens
