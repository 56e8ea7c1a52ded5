#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "robustlens/tensor.hpp"

namespace robustlens {

enum class OpKind {
  kConv2d,
  kMatmul,
  kAdd,
  kAddBias,
  kRelu,
  kMaxPool2d,
  kFlatten,
  kSoftmaxCrossEntropy,
  kScale,
  kSum,
  kAffineSample,
};

std::string_view op_name(OpKind kind);

template <class T>
class Graph;

/// Handle to a value recorded on a Graph.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape.
///
/// Values are appended in creation order, so every recorded node's inputs
/// precede it. Leaves either own their tensor or refer to an external one;
/// external leaves that require grad receive dL/dleaf in their own gradient
/// buffer after backward(). External tensors must outlive the graph.
///
/// A graph is single-use: backward() marks it consumed.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::span<const T> out_grad)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf referring to `t`; tracked for gradients iff t.requires_grad().
  Var<T> leaf(Tensor<T>& t);
  /// Read-only leaf referring to `t`; never receives gradients.
  Var<T> constant_ref(const Tensor<T>& t);
  /// Owned leaf.
  Var<T> input(Tensor<T> t, bool requires_grad = false);

  const Tensor<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return slots_.at(v.id).requires_grad; }

  /// dL/dv from the last backward(); empty when v was not on a grad path.
  std::span<const T> grad(Var<T> v) const;

  /// Backpropagates a scalar loss with seed 1.
  void backward(Var<T> loss);
  /// Backpropagates an arbitrary output with an explicit seed gradient.
  void backward(Var<T> output, std::span<const T> seed);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return slots_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Appends an op output. The backward closure is kept only when some input
  /// requires grad. Throws NumericalError on non-finite output.
  Var<T> record(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> out,
                BackwardFn backward);

  /// Gradient accumulator for input `id`; allocated on demand.
  std::span<T> grad_buffer(std::size_t id);

 private:
  struct Slot {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* external_mutable = nullptr;
    bool requires_grad = false;
    std::vector<T> grad;
  };

  Var<T> push(Slot slot);
  void check_handle(Var<T> v) const;

  std::deque<Slot> slots_;  // stable references across push_back
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(*this);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace robustlens
