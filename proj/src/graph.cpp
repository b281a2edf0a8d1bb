#include "tseg/graph.hpp"

#include <algorithm>

namespace tseg {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Scale: return "scale";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Pow: return "pow";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::LogSigmoid: return "log_sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sum: return "sum";
    case OpKind::Max: return "max";
    case OpKind::Softmax: return "softmax";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Reshape: return "reshape";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Embedding: return "embedding";
    case OpKind::Upsample: return "upsample";
    case OpKind::Attention: return "attention";
  }
  return "?";
}

Graph& Var::graph() const {
  if (!graph_) throw std::logic_error("use of an unbound Var");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(id_); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NonFiniteError("leaf tensor contains non-finite values");
  Node node;
  node.kind = OpKind::Leaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs,
                  BackwardFn backward) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite output from op '") + op_name(kind) + "'");
  }
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Graph::backward(Var seed) {
  if (!seed.valid()) throw std::logic_error("backward: seed was never evaluated");
  if (&seed.graph() != this) throw std::logic_error("backward: seed belongs to another graph");
  const auto sid = seed.id();
  if (nodes_[sid].value.size() != 1) {
    throw ShapeError("backward: seed must be scalar, got " + shape_str(nodes_[sid].value.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[sid].requires_grad) return;
  grad_buffer(sid)[0] = 1.0;
  for (std::size_t k = sid + 1; k-- > 0;) {
    auto& node = nodes_[k];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, k);
  }
}

bool Graph::has_grad(Var v) const { return !nodes_.at(v.id()).grad.empty(); }

Tensor Graph::grad(Var v) const {
  const auto& node = nodes_.at(v.id());
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return Tensor(node.value.shape(), node.grad);
}

}  // namespace tseg
