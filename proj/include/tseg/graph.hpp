#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddScalar,
  Scale,
  MatMul,
  Transpose,
  Exp,
  Log,
  Pow,
  Sigmoid,
  LogSigmoid,
  Relu,
  Gelu,
  Sum,
  Max,
  Softmax,
  Broadcast,
  Reshape,
  Slice,
  Concat,
  LayerNorm,
  Embedding,
  Upsample,
  Attention,
};

const char* op_name(OpKind kind);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph& graph() const;
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Eager reverse-mode tape. Nodes are appended in evaluation order, so the node
// vector is already topologically sorted: every input id precedes its consumer.
class Graph {
 public:
  // Accumulates d(seed)/d(node) into the inputs of node `self`.
  using BackwardFn = std::function<void(Graph& graph, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op node. Throws NonFiniteError when `value` has NaN/Inf.
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs,
             BackwardFn backward);

  // Seed must be a single-element node of this graph. Clears earlier grads.
  void backward(Var seed);

  bool has_grad(Var v) const;
  // Gradient of the last backward seed w.r.t. `v`; zeros if unreachable.
  Tensor grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_.at(id).inputs;
  }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Used by backward functions.
  std::span<const double> out_grad(std::size_t id) const { return nodes_[id].grad; }
  std::span<double> grad_buffer(std::size_t id);

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<double> grad;
  };

  std::vector<Node> nodes_;
};

}  // namespace tseg
