#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "ss3d/autodiff/array.hpp"

namespace ss3d::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  const Array& grad() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient slots of an op's parents; an entry is null when that parent needs no gradient.
using ParentGrads = std::span<Array* const>;

/// Accumulates the op's vector-Jacobian product into its parents' slots.
using BackwardFn = std::function<void(const Array& out_value, const Array& out_grad, ParentGrads parents)>;

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order; backward walks it in reverse and visits each reachable
/// node once. A tape has a single owner; separate tapes share nothing.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var variable(Array value);
  /// Leaf that never receives a gradient.
  Var constant(Array value);
  Var constant(double value) { return constant(Array::scalar(value)); }

  /// Records an op result. The backward function is dropped when no parent needs a gradient.
  Var record(Array value, std::vector<Var> parents, BackwardFn backward);

  /// Computes d(root)/d(node) for every node that requires a gradient.
  /// Gradient slots are reset first, so repeated calls do not accumulate.
  void backward(Var root);

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  const Array& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::deque<Node> nodes_;
};

inline const Array& Var::value() const { return tape_->value(id_); }
inline const Array& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace ss3d::ad
