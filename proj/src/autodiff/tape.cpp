#include "ss3d/autodiff/tape.hpp"

#include "ss3d/common/error.hpp"

namespace ss3d::ad {

Var Tape::variable(Array value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Array value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, std::vector<Var> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    require(p.tape() == this, "E_TAPE", "op input belongs to a different tape");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Array& Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  require(node.has_grad, "E_TAPE", "gradient requested for a node without a gradient slot; call backward first");
  return node.grad;
}

void Tape::backward(Var root) {
  require(root.tape() == this, "E_TAPE", "backward root belongs to a different tape");
  require(root.size() == 1, "E_NONSCALAR_ROOT", "backward requires a scalar root, got shape " + shape_string(root.shape()));

  for (Node& node : nodes_) {
    if (node.requires_grad) {
      node.grad = Array(node.value.shape(), 0.0);
      node.has_grad = true;
    }
  }
  Node& top = nodes_[root.id()];
  if (!top.requires_grad) {
    return;
  }
  top.grad[0] = 1.0;

  std::vector<char> reachable(root.id() + 1, 0);
  reachable[root.id()] = 1;
  std::vector<Array*> slots;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!reachable[id] || !node.requires_grad || !node.backward) {
      continue;
    }
    slots.assign(node.parents.size(), nullptr);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      Node& parent = nodes_[node.parents[k]];
      if (parent.requires_grad) {
        slots[k] = &parent.grad;
        reachable[node.parents[k]] = 1;
      }
    }
    node.backward(node.value, node.grad, ParentGrads(slots.data(), slots.size()));
  }
}

}  // namespace ss3d::ad
