#include "ss3d/autodiff/array.hpp"

#include <algorithm>
#include <sstream>

#include "ss3d/common/error.hpp"

namespace ss3d::ad {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ')';
  return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  require(data_.size() == element_count(shape_), "E_SHAPE",
          "array data size " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

std::size_t Array::dim(std::size_t axis) const {
  require(axis < shape_.size(), "E_SHAPE", "axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

double Array::item() const {
  require(data_.size() == 1, "E_SHAPE", "item() on array of shape " + shape_string(shape_));
  return data_[0];
}

void Array::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Array Array::reshaped(Shape shape) const {
  require(element_count(shape) == data_.size(), "E_SHAPE",
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Array(std::move(shape), data_);
}

}  // namespace ss3d::ad
