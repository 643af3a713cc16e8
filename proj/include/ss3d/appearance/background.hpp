#pragma once

#include <cstddef>

#include "ss3d/autodiff/ops.hpp"

namespace ss3d {

/// One color per row (H_bg x 3 logits), rendered as horizontal stripes.
struct StripeBackground {
  ad::Array rows = ad::Array({8, 3});

  std::size_t num_rows() const { return rows.shape()[0]; }
  void validate() const;

  static StripeBackground constant(std::size_t rows, double r, double g, double b);
};

/// (H x H_bg) vertical linear interpolation with pixel-center alignment and edge clamping.
ad::Array stripe_interpolation(std::size_t source_rows, std::size_t height);

/// sigmoid(rows), upsampled to `height` rows and repeated over `width` columns.
/// Throws E_ARG when H_bg > height.
ad::Var realize_background(ad::Var rows, std::size_t height, std::size_t width);
ad::Array realize_background(const StripeBackground& bg, std::size_t height, std::size_t width);

/// Per-row mean color of an H x W x 3 image, resampled to H_bg rows as logits.
StripeBackground fit_background(const ad::Array& image, std::size_t rows);

}  // namespace ss3d
