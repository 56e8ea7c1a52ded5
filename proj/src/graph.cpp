#include "robustlens/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace robustlens {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kRelu: return "relu";
    case OpKind::kMaxPool2d: return "maxpool2d";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kAffineSample: return "affine_sample";
  }
  return "unknown";
}

template <class T>
Var<T> Graph<T>::push(Slot slot) {
  slots_.push_back(std::move(slot));
  return Var<T>{this, slots_.size() - 1};
}

template <class T>
void Graph<T>::check_handle(Var<T> v) const {
  if (v.graph != this || v.id >= slots_.size()) {
    throw GraphError("graph: variable does not belong to this graph");
  }
}

template <class T>
Var<T> Graph<T>::leaf(Tensor<T>& t) {
  Slot s;
  s.external = &t;
  s.external_mutable = &t;
  s.requires_grad = t.requires_grad();
  return push(std::move(s));
}

template <class T>
Var<T> Graph<T>::constant_ref(const Tensor<T>& t) {
  Slot s;
  s.external = &t;
  return push(std::move(s));
}

template <class T>
Var<T> Graph<T>::input(Tensor<T> t, bool requires_grad) {
  Slot s;
  s.owned = std::move(t);
  s.requires_grad = requires_grad;
  return push(std::move(s));
}

template <class T>
const Tensor<T>& Graph<T>::value(Var<T> v) const {
  check_handle(v);
  const Slot& s = slots_[v.id];
  return s.external ? *s.external : s.owned;
}

template <class T>
std::span<const T> Graph<T>::grad(Var<T> v) const {
  check_handle(v);
  return slots_[v.id].grad;
}

template <class T>
std::span<T> Graph<T>::grad_buffer(std::size_t id) {
  Slot& s = slots_.at(id);
  if (s.grad.empty()) {
    const std::size_t n = s.external ? s.external->numel() : s.owned.numel();
    s.grad.assign(n, T{0});
  }
  return s.grad;
}

template <class T>
Var<T> Graph<T>::record(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> out,
                        BackwardFn backward) {
  if (consumed_) throw GraphError("graph: cannot record after backward");
  if (!out.all_finite()) {
    throw NumericalError(std::string(op_name(kind)) + ": non-finite output");
  }
  const bool any_grad = std::any_of(inputs.begin(), inputs.end(),
                                    [&](std::size_t i) { return slots_.at(i).requires_grad; });
  Slot s;
  s.owned = std::move(out);
  s.requires_grad = any_grad;
  Var<T> v = push(std::move(s));
  if (any_grad) nodes_.push_back(Node{kind, std::move(inputs), v.id, std::move(backward)});
  return v;
}

template <class T>
void Graph<T>::backward(Var<T> loss) {
  check_handle(loss);
  if (value(loss).numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(value(loss).shape()));
  }
  const T one{1};
  backward(loss, std::span<const T>(&one, 1));
}

template <class T>
void Graph<T>::backward(Var<T> output, std::span<const T> seed) {
  check_handle(output);
  if (consumed_) throw GraphError("backward: graph already consumed");
  if (seed.size() != value(output).numel()) {
    throw ShapeError("backward: seed has " + std::to_string(seed.size()) +
                     " elements, output has " + std::to_string(value(output).numel()));
  }
  consumed_ = true;
  if (!slots_[output.id].requires_grad) return;

  auto out_grad = grad_buffer(output.id);
  std::copy(seed.begin(), seed.end(), out_grad.begin());

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output > output.id) continue;
    const Slot& s = slots_[it->output];
    if (s.grad.empty()) continue;
    it->backward(*this, std::span<const T>(s.grad));
    for (std::size_t in : it->inputs) {
      for (const T g : slots_[in].grad) {
        if (!std::isfinite(g)) {
          throw NumericalError(std::string(op_name(it->kind)) + ": non-finite gradient");
        }
      }
    }
  }

  for (Slot& s : slots_) {
    if (!s.external_mutable || !s.requires_grad || s.grad.empty()) continue;
    auto dst = s.external_mutable->mutable_grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s.grad[i];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace robustlens
