#include "robustlens/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace robustlens {
namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what) {
  throw ShapeError(std::string(op_name(kind)) + ": " + what);
}

void require_rank(OpKind kind, const Shape& s, std::size_t rank, const char* operand) {
  if (s.size() != rank) {
    shape_fail(kind, std::string(operand) + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(s));
  }
}

template <class T>
Graph<T>& same_graph(OpKind kind, Var<T> a, Var<T> b) {
  if (a.graph == nullptr || a.graph != b.graph) shape_fail(kind, "operands live on different graphs");
  return *a.graph;
}

// Output positions o in [lo, hi) whose input index o*stride + k - pad lies in [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t extent,
                                                std::size_t stride, std::size_t k, std::size_t pad) {
  const long long s = static_cast<long long>(stride);
  const long long off = static_cast<long long>(k) - static_cast<long long>(pad);
  long long lo = 0;
  if (off < 0) lo = (-off + s - 1) / s;
  long long hi = (static_cast<long long>(extent) - 1 - off);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out_extent));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Conv2dAttrs attrs) {
  constexpr OpKind kind = OpKind::kConv2d;
  Graph<T>& g = same_graph(kind, x, w);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require_rank(kind, xs, 4, "input");
  require_rank(kind, ws, 4, "kernel");
  if (attrs.stride == 0) shape_fail(kind, "stride must be positive");
  if (ws[1] != xs[1]) {
    shape_fail(kind, "kernel expects " + std::to_string(ws[1]) + " input channels, input " +
                         shape_str(xs) + " has " + std::to_string(xs[1]));
  }
  const std::size_t n_batch = xs[0], c_in = xs[1], h = xs[2], wd = xs[3];
  const std::size_t f_out = ws[0], kh = ws[2], kw = ws[3];
  if (h + 2 * attrs.pad < kh || wd + 2 * attrs.pad < kw) {
    shape_fail(kind, "kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs));
  }
  const std::size_t oh = (h + 2 * attrs.pad - kh) / attrs.stride + 1;
  const std::size_t ow = (wd + 2 * attrs.pad - kw) / attrs.stride + 1;
  const std::size_t s = attrs.stride, p = attrs.pad;

  Tensor<T> out({n_batch, f_out, oh, ow});
  {
    const auto xd = x.value().data();
    const auto wdata = w.value().data();
    auto od = out.data();
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t f = 0; f < f_out; ++f) {
        T* o = &od[(n * f_out + f) * oh * ow];
        for (std::size_t c = 0; c < c_in; ++c) {
          const T* xp = &xd[(n * c_in + c) * h * wd];
          for (std::size_t i = 0; i < kh; ++i) {
            const auto [ylo, yhi] = valid_range(oh, h, s, i, p);
            for (std::size_t j = 0; j < kw; ++j) {
              const T wv = wdata[((f * c_in + c) * kh + i) * kw + j];
              const auto [xlo, xhi] = valid_range(ow, wd, s, j, p);
              for (std::size_t y = ylo; y < yhi; ++y) {
                const T* row = xp + (y * s + i - p) * wd;
                T* orow = o + y * ow;
                for (std::size_t xo = xlo; xo < xhi; ++xo) orow[xo] += wv * row[xo * s + j - p];
              }
            }
          }
        }
      }
    }
  }

  const std::size_t xi = x.id, wi = w.id;
  return g.record(kind, {xi, wi}, std::move(out),
                  [=](Graph<T>& gr, std::span<const T> dout) {
                    const bool need_x = gr.requires_grad(Var<T>{&gr, xi});
                    const bool need_w = gr.requires_grad(Var<T>{&gr, wi});
                    const auto xd = gr.value(Var<T>{&gr, xi}).data();
                    const auto wdata = gr.value(Var<T>{&gr, wi}).data();
                    std::span<T> dx, dw;
                    if (need_x) dx = gr.grad_buffer(xi);
                    if (need_w) dw = gr.grad_buffer(wi);
                    for (std::size_t n = 0; n < n_batch; ++n) {
                      for (std::size_t f = 0; f < f_out; ++f) {
                        const T* go = &dout[(n * f_out + f) * oh * ow];
                        for (std::size_t c = 0; c < c_in; ++c) {
                          const std::size_t plane = (n * c_in + c) * h * wd;
                          for (std::size_t i = 0; i < kh; ++i) {
                            const auto [ylo, yhi] = valid_range(oh, h, s, i, p);
                            for (std::size_t j = 0; j < kw; ++j) {
                              const std::size_t widx = ((f * c_in + c) * kh + i) * kw + j;
                              const auto [xlo, xhi] = valid_range(ow, wd, s, j, p);
                              const T wv = wdata[widx];
                              T acc{0};
                              for (std::size_t y = ylo; y < yhi; ++y) {
                                const std::size_t rbase = plane + (y * s + i - p) * wd + j - p;
                                const T* grow = go + y * ow;
                                for (std::size_t xo = xlo; xo < xhi; ++xo) {
                                  const std::size_t idx = rbase + xo * s;
                                  if (need_w) acc += grow[xo] * xd[idx];
                                  if (need_x) dx[idx] += wv * grow[xo];
                                }
                              }
                              if (need_w) dw[widx] += acc;
                            }
                          }
                        }
                      }
                    }
                  });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b) {
  constexpr OpKind kind = OpKind::kMatmul;
  Graph<T>& g = same_graph(kind, a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank(kind, as, 2, "lhs");
  require_rank(kind, bs, 2, "rhs");
  const std::size_t m = as[0], k = as[1];
  const std::size_t bk = transpose_b ? bs[1] : bs[0];
  const std::size_t n = transpose_b ? bs[0] : bs[1];
  if (bk != k) {
    shape_fail(kind, "inner dimensions differ: " + shape_str(as) + " vs " + shape_str(bs) +
                         (transpose_b ? " (transposed)" : ""));
  }
  // b(r, c) in the logical K x N orientation.
  auto bidx = [=](std::size_t r, std::size_t c) { return transpose_b ? c * k + r : r * n + c; };

  Tensor<T> out({m, n});
  {
    const auto ad = a.value().data();
    const auto bd = b.value().data();
    auto od = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc{0};
        for (std::size_t r = 0; r < k; ++r) acc += ad[i * k + r] * bd[bidx(r, j)];
        od[i * n + j] = acc;
      }
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.record(kind, {ai, bi}, std::move(out), [=](Graph<T>& gr, std::span<const T> dout) {
    const auto ad = gr.value(Var<T>{&gr, ai}).data();
    const auto bd = gr.value(Var<T>{&gr, bi}).data();
    if (gr.requires_grad(Var<T>{&gr, ai})) {
      auto da = gr.grad_buffer(ai);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t r = 0; r < k; ++r) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += dout[i * n + j] * bd[bidx(r, j)];
          da[i * k + r] += acc;
        }
      }
    }
    if (gr.requires_grad(Var<T>{&gr, bi})) {
      auto db = gr.grad_buffer(bi);
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
          T acc{0};
          for (std::size_t i = 0; i < m; ++i) acc += ad[i * k + r] * dout[i * n + j];
          db[bidx(r, j)] += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  constexpr OpKind kind = OpKind::kAdd;
  Graph<T>& g = same_graph(kind, a, b);
  if (a.shape() != b.shape()) {
    shape_fail(kind, "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  out.clear_grad();
  {
    auto od = out.data();
    const auto bd = b.value().data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.record(kind, {ai, bi}, std::move(out), [=](Graph<T>& gr, std::span<const T> dout) {
    for (std::size_t id : {ai, bi}) {
      if (!gr.requires_grad(Var<T>{&gr, id})) continue;
      auto d = gr.grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i];
    }
  });
}

template <class T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  constexpr OpKind kind = OpKind::kAddBias;
  Graph<T>& g = same_graph(kind, x, b);
  const Shape& xs = x.shape();
  const Shape& bs = b.shape();
  if (xs.size() != 2 && xs.size() != 4) shape_fail(kind, "input must be N x C or NCHW, got " + shape_str(xs));
  if (bs.size() != 1 || bs[0] != xs[1]) {
    shape_fail(kind, "bias " + shape_str(bs) + " does not match channel dim of " + shape_str(xs));
  }
  const std::size_t n_batch = xs[0], channels = xs[1];
  const std::size_t inner = xs.size() == 4 ? xs[2] * xs[3] : 1;
  Tensor<T> out = x.value();
  out.clear_grad();
  {
    auto od = out.data();
    const auto bd = b.value().data();
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < inner; ++i) od[(n * channels + c) * inner + i] += bd[c];
  }
  const std::size_t xi = x.id, bi = b.id;
  return g.record(kind, {xi, bi}, std::move(out), [=](Graph<T>& gr, std::span<const T> dout) {
    if (gr.requires_grad(Var<T>{&gr, xi})) {
      auto dx = gr.grad_buffer(xi);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
    }
    if (gr.requires_grad(Var<T>{&gr, bi})) {
      auto db = gr.grad_buffer(bi);
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
          T acc{0};
          for (std::size_t i = 0; i < inner; ++i) acc += dout[(n * channels + c) * inner + i];
          db[c] += acc;
        }
    }
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  out.clear_grad();
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  const std::size_t xi = x.id;
  return x.graph->record(OpKind::kRelu, {xi}, std::move(out),
                         [=](Graph<T>& gr, std::span<const T> dout) {
                           const auto xd = gr.value(Var<T>{&gr, xi}).data();
                           auto dx = gr.grad_buffer(xi);
                           for (std::size_t i = 0; i < dx.size(); ++i)
                             if (xd[i] > T{0}) dx[i] += dout[i];
                         });
}

template <class T>
Var<T> maxpool2d(Var<T> x, std::size_t window) {
  constexpr OpKind kind = OpKind::kMaxPool2d;
  const Shape& xs = x.shape();
  require_rank(kind, xs, 4, "input");
  if (window == 0) shape_fail(kind, "window must be positive");
  if (xs[2] < window || xs[3] < window) {
    shape_fail(kind, "window " + std::to_string(window) + " exceeds input " + shape_str(xs));
  }
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = h / window, ow = w / window;
  Tensor<T> out({xs[0], xs[1], oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  const auto xd = x.value().data();
  auto od = out.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = pl * h * w + (i * window) * w + j * window;
        for (std::size_t a = 0; a < window; ++a)
          for (std::size_t b = 0; b < window; ++b) {
            const std::size_t idx = pl * h * w + (i * window + a) * w + j * window + b;
            if (xd[idx] > xd[best]) best = idx;
          }
        const std::size_t o = (pl * oh + i) * ow + j;
        od[o] = xd[best];
        argmax[o] = best;
      }
    }
  }
  const std::size_t xi = x.id;
  return x.graph->record(kind, {xi}, std::move(out),
                         [xi, argmax = std::move(argmax)](Graph<T>& gr, std::span<const T> dout) {
                           auto dx = gr.grad_buffer(xi);
                           for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dout[o];
                         });
}

template <class T>
Var<T> flatten(Var<T> x) {
  const Shape& xs = x.shape();
  if (xs.empty()) shape_fail(OpKind::kFlatten, "input must have a batch dimension");
  const std::size_t n = xs[0];
  const std::size_t rest = n == 0 ? 0 : x.value().numel() / n;
  Tensor<T> out = x.value().reshaped({n, rest});
  const std::size_t xi = x.id;
  return x.graph->record(OpKind::kFlatten, {xi}, std::move(out),
                         [=](Graph<T>& gr, std::span<const T> dout) {
                           auto dx = gr.grad_buffer(xi);
                           for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
                         });
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax: logits must be N x K, got " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = &logits[i * k];
    const T zmax = *std::max_element(z, z + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = std::exp(z[j] - zmax) / denom;
  }
  return out;
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  constexpr OpKind kind = OpKind::kSoftmaxCrossEntropy;
  const Shape& zs = logits.shape();
  require_rank(kind, zs, 2, "logits");
  const std::size_t n = zs[0], k = zs[1];
  if (labels.size() != n) {
    shape_fail(kind, std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  if (n == 0) shape_fail(kind, "empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      shape_fail(kind, "label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const Tensor<T>& z = logits.value();
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = &z[i * k];
    const T zmax = *std::max_element(row, row + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - zmax);
    total += zmax + std::log(denom) - row[labels[i]];
  }
  Tensor<T> out({1}, {total / static_cast<T>(n)});
  std::vector<int> saved(labels.begin(), labels.end());
  const std::size_t zi = logits.id;
  return logits.graph->record(
      kind, {zi}, std::move(out),
      [zi, n, k, saved = std::move(saved)](Graph<T>& gr, std::span<const T> dout) {
        const Tensor<T> p = softmax_rows(gr.value(Var<T>{&gr, zi}));
        auto dz = gr.grad_buffer(zi);
        const T g = dout[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = static_cast<int>(j) == saved[i] ? T{1} : T{0};
            dz[i * k + j] += g * (p[i * k + j] - onehot);
          }
      });
}

template <class T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  out.clear_grad();
  for (T& v : out.data()) v *= factor;
  const std::size_t xi = x.id;
  return x.graph->record(OpKind::kScale, {xi}, std::move(out),
                         [=](Graph<T>& gr, std::span<const T> dout) {
                           auto dx = gr.grad_buffer(xi);
                           for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dout[i];
                         });
}

template <class T>
Var<T> sum(Var<T> x) {
  T total{0};
  for (const T v : x.value().data()) total += v;
  const std::size_t xi = x.id;
  return x.graph->record(OpKind::kSum, {xi}, Tensor<T>({1}, {total}),
                         [=](Graph<T>& gr, std::span<const T> dout) {
                           auto dx = gr.grad_buffer(xi);
                           for (T& d : dx) d += dout[0];
                         });
}

template <class T>
T bilinear_at(std::span<const T> plane, std::size_t h, std::size_t w, double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  const long long x0 = static_cast<long long>(fx0), y0 = static_cast<long long>(fy0);
  const long long hh = static_cast<long long>(h), ww = static_cast<long long>(w);
  auto px = [&](long long yy, long long xx) -> double {
    if (xx < 0 || yy < 0 || xx >= ww || yy >= hh) return 0.0;
    return static_cast<double>(plane[static_cast<std::size_t>(yy * ww + xx)]);
  };
  const double v = (1 - fx) * (1 - fy) * px(y0, x0) + fx * (1 - fy) * px(y0, x0 + 1) +
                   (1 - fx) * fy * px(y0 + 1, x0) + fx * fy * px(y0 + 1, x0 + 1);
  return static_cast<T>(v);
}

template <class T>
Var<T> affine_sample(Var<T> x, const AffineMatrix& m) {
  constexpr OpKind kind = OpKind::kAffineSample;
  const Shape& xs = x.shape();
  require_rank(kind, xs, 4, "input");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  Tensor<T> out(xs);
  const auto xd = x.value().data();
  auto od = out.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const auto plane = xd.subspan(pl * h * w, h * w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double sx = m[0] * j + m[1] * i + m[2];
        const double sy = m[3] * j + m[4] * i + m[5];
        od[pl * h * w + i * w + j] = bilinear_at<T>(plane, h, w, sx, sy);
      }
  }
  const std::size_t xi = x.id;
  return x.graph->record(kind, {xi}, std::move(out), [=](Graph<T>& gr, std::span<const T> dout) {
    auto dx = gr.grad_buffer(xi);
    const long long hh = static_cast<long long>(h), ww = static_cast<long long>(w);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double sx = m[0] * j + m[1] * i + m[2];
          const double sy = m[3] * j + m[4] * i + m[5];
          const double fx0 = std::floor(sx), fy0 = std::floor(sy);
          const double fx = sx - fx0, fy = sy - fy0;
          const long long x0 = static_cast<long long>(fx0), y0 = static_cast<long long>(fy0);
          const T go = dout[pl * h * w + i * w + j];
          auto put = [&](long long yy, long long xx, double wt) {
            if (xx < 0 || yy < 0 || xx >= ww || yy >= hh) return;
            dx[pl * h * w + static_cast<std::size_t>(yy * ww + xx)] += static_cast<T>(wt) * go;
          };
          put(y0, x0, (1 - fx) * (1 - fy));
          put(y0, x0 + 1, fx * (1 - fy));
          put(y0 + 1, x0, (1 - fx) * fy);
          put(y0 + 1, x0 + 1, fx * fy);
        }
    }
  });
}

#define ROBUSTLENS_INSTANTIATE_OPS(T)                                                   \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Conv2dAttrs);                               \
  template Var<T> matmul<T>(Var<T>, Var<T>, bool);                                      \
  template Var<T> add<T>(Var<T>, Var<T>);                                               \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                          \
  template Var<T> relu<T>(Var<T>);                                                      \
  template Var<T> maxpool2d<T>(Var<T>, std::size_t);                                    \
  template Var<T> flatten<T>(Var<T>);                                                   \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>);               \
  template Var<T> scale<T>(Var<T>, T);                                                  \
  template Var<T> sum<T>(Var<T>);                                                       \
  template Var<T> affine_sample<T>(Var<T>, const AffineMatrix&);                        \
  template T bilinear_at<T>(std::span<const T>, std::size_t, std::size_t, double, double); \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);

ROBUSTLENS_INSTANTIATE_OPS(float)
ROBUSTLENS_INSTANTIATE_OPS(double)

#undef ROBUSTLENS_INSTANTIATE_OPS

}  // namespace robustlens
