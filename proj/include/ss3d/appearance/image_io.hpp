#pragma once

#include <string>
#include <vector>

#include "ss3d/autodiff/array.hpp"

namespace ss3d {

/// Images are H x W x 3 arrays in [0, 1]. Files store 8-bit channels; values
/// are clamped and rounded on write.
void write_png(const std::string& path, const ad::Array& image);
void write_ppm(const std::string& path, const ad::Array& image);
/// Chooses the format from the extension (.png or .ppm).
void write_image(const std::string& path, const ad::Array& image);

/// Reads PNG (any bit depth or color type, converted to 8-bit RGB) or binary
/// PPM (P6, maxval 255), detected from the file signature. Throws E_IO.
ad::Array read_image(const std::string& path);

/// Stacks equally sized images into a rows x cols grid.
ad::Array tile_images(const std::vector<ad::Array>& images, std::size_t cols);

}  // namespace ss3d
