#include "ss3d/appearance/background.hpp"

#include <algorithm>
#include <cmath>

#include "ss3d/appearance/texture.hpp"
#include "ss3d/common/error.hpp"

namespace ss3d {

void StripeBackground::validate() const {
  require(rows.rank() == 2 && rows.shape()[1] == 3 && rows.shape()[0] > 0, "E_SHAPE",
          "background rows must be H_bg x 3");
}

StripeBackground StripeBackground::constant(std::size_t count, double r, double g, double b) {
  StripeBackground bg;
  bg.rows = ad::Array({count, 3});
  for (std::size_t i = 0; i < count; ++i) {
    bg.rows[3 * i] = logit(r);
    bg.rows[3 * i + 1] = logit(g);
    bg.rows[3 * i + 2] = logit(b);
  }
  return bg;
}

ad::Array stripe_interpolation(std::size_t source_rows, std::size_t height) {
  require(source_rows > 0 && source_rows <= height, "E_ARG", "background needs 1 <= H_bg <= H");
  ad::Array m({height, source_rows});
  const double scale = static_cast<double>(source_rows) / static_cast<double>(height);
  const double last = static_cast<double>(source_rows - 1);
  for (std::size_t i = 0; i < height; ++i) {
    const double s = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, last);
    const std::size_t i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, source_rows - 1);
    const double t = s - static_cast<double>(i0);
    m[i * source_rows + i0] += 1.0 - t;
    m[i * source_rows + i1] += t;
  }
  return m;
}

ad::Var realize_background(ad::Var rows, std::size_t height, std::size_t width) {
  require(rows.shape().size() == 2 && rows.shape()[1] == 3, "E_SHAPE", "background rows must be H_bg x 3");
  ad::Tape& tape = *rows.tape();
  ad::Var colors = ad::matmul(tape.constant(stripe_interpolation(rows.shape()[0], height)), ad::sigmoid(rows));
  return ad::broadcast_to(ad::reshape(colors, {height, 1, 3}), {height, width, 3});
}

ad::Array realize_background(const StripeBackground& bg, std::size_t height, std::size_t width) {
  bg.validate();
  ad::Tape tape;
  return realize_background(tape.constant(bg.rows), height, width).value();
}

StripeBackground fit_background(const ad::Array& image, std::size_t count) {
  require(image.rank() == 3 && image.shape()[2] == 3, "E_SHAPE", "image must be H x W x 3");
  const std::size_t h = image.shape()[0];
  const std::size_t w = image.shape()[1];
  require(count > 0 && count <= h, "E_ARG", "background needs 1 <= H_bg <= H");
  StripeBackground bg;
  bg.rows = ad::Array({count, 3});
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t y0 = r * h / count;
    const std::size_t y1 = std::max(y0 + 1, (r + 1) * h / count);
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = 0; x < w; ++x) s += image[(y * w + x) * 3 + static_cast<std::size_t>(c)];
      }
      bg.rows[3 * r + static_cast<std::size_t>(c)] = logit(s / static_cast<double>((y1 - y0) * w));
    }
  }
  return bg;
}

}  // namespace ss3d
