#include "batch.hpp"

#include <algorithm>

#include "ss3d/common/error.hpp"

namespace ss3d::detail {

ad::Array stack_outputs(const std::vector<ItemGraph>& items) {
  require(!items.empty(), "E_ARG", "empty batch");
  const ad::Shape& one = items.front().output.shape();
  ad::Shape shape{items.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  std::vector<double> values;
  values.reserve(items.size() * items.front().output.size());
  for (const ItemGraph& item : items) {
    require(item.output.shape() == one, "E_SHAPE", "batch outputs differ in shape");
    const auto data = item.output.value().data();
    values.insert(values.end(), data.begin(), data.end());
  }
  return ad::Array(shape, std::move(values));
}

ad::Array slice_item(const ad::Array& batch, std::size_t i) {
  const std::size_t stride = batch.size() / batch.shape()[0];
  ad::Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const auto begin = batch.data().begin() + static_cast<long>(i * stride);
  return ad::Array(shape, std::vector<double>(begin, begin + static_cast<long>(stride)));
}

std::vector<ad::Array> pull_back(ItemGraph& item, const ad::Array& output_grad) {
  ad::Tape& tape = *item.tape;
  ad::Var root = ad::sum(item.output * tape.constant(output_grad));
  if (item.local.valid()) root = root + item.local;
  tape.backward(root);
  std::vector<ad::Array> grads;
  grads.reserve(item.leaves.size());
  for (const ad::Var& leaf : item.leaves) grads.push_back(leaf.grad());
  return grads;
}

void accumulate(std::vector<ad::Array>& gradients, const std::vector<ad::Array>& add) {
  if (gradients.empty()) {
    gradients = add;
    return;
  }
  require(gradients.size() == add.size(), "E_SHAPE", "gradient lists differ in length");
  for (std::size_t k = 0; k < add.size(); ++k) {
    for (std::size_t i = 0; i < add[k].size(); ++i) gradients[k][i] += add[k][i];
  }
}

}  // namespace ss3d::detail
