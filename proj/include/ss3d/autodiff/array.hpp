#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ss3d::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of 64-bit floats. A rank-0 array holds one element.
class Array {
 public:
  Array() : data_(1, 0.0) {}
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> values);

  static Array scalar(double value) { return Array(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const& { return data_; }
  std::vector<double> values() && { return std::move(data_); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element array.
  double item() const;

  void fill(double value);
  Array reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace ss3d::ad
