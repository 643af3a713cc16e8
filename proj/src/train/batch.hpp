#pragma once

#include <memory>
#include <vector>

#include "ss3d/autodiff/ops.hpp"

namespace ss3d::detail {

/// One batch member rendered on its own tape so members can be built in
/// parallel. `leaves` are the parameters read by the member.
struct ItemGraph {
  std::unique_ptr<ad::Tape> tape = std::make_unique<ad::Tape>();
  std::vector<ad::Var> leaves;
  ad::Var output;
  /// Optional scalar loss on the item tape added to the pulled-back objective.
  ad::Var local;
};

/// Stacks item outputs of equal shape along a new leading axis.
ad::Array stack_outputs(const std::vector<ItemGraph>& items);

/// Row i of an (N x ...) array.
ad::Array slice_item(const ad::Array& batch, std::size_t i);

/// Pulls `output_grad` back through the item tape: returns the gradient of
/// sum(output * output_grad) + local for every leaf.
std::vector<ad::Array> pull_back(ItemGraph& item, const ad::Array& output_grad);

/// gradients[k] += add[k].
void accumulate(std::vector<ad::Array>& gradients, const std::vector<ad::Array>& add);

}  // namespace ss3d::detail
