#pragma once

#include <cstddef>
#include <vector>

#include "ss3d/autodiff/ops.hpp"
#include "ss3d/common/random.hpp"
#include "ss3d/mesh/triangle_mesh.hpp"

namespace ss3d {

/// Fixed texture atlas: every face owns a P x P patch in a G x G grid of
/// patches, G = ceil(sqrt(F)). Face corners sit at texel centers of a
/// right-triangle layout so bilinear lookups never leave the patch.
struct TextureAtlas {
  std::size_t patch = 4;
  std::size_t grid = 1;
  std::size_t num_faces = 0;

  std::size_t size() const { return patch * grid; }
  /// Texel-space position (x, y) of corner k of face f.
  Vec2 corner(std::size_t face, int k) const;
  /// (F x 3 x 2) corner positions in texel units, for the renderer.
  ad::Array corner_array() const;
  /// Sets mesh.uvs / face_uvs to normalized atlas coordinates (v up).
  void apply(TriangleMesh& mesh) const;
};

/// Throws E_ARG for zero faces or patch < 2.
TextureAtlas make_atlas(std::size_t num_faces, std::size_t patch);

enum class TextureMode { kFewColor, kFreeRgb };

/// Texture parameters as unconstrained logits. Few-color mode mixes an N_c
/// color palette with per-texel softmax weights; free mode is per-texel RGB.
struct TextureSpec {
  TextureMode mode = TextureMode::kFewColor;
  ad::Array weights;  // T x T x N_c
  ad::Array palette;  // N_c x 3
  ad::Array rgb;      // T x T x 3

  std::size_t size() const;
  std::size_t num_colors() const { return mode == TextureMode::kFewColor ? palette.shape()[0] : 0; }

  /// Throws E_SHAPE / E_ARG on inconsistent shapes or N_c = 0.
  void validate() const;

  static TextureSpec few_color(std::size_t texels, std::size_t colors);
  static TextureSpec free_rgb(std::size_t texels);
};

/// sum_c softmax(weights)_c * sigmoid(palette_c): (T x T x N_c), (N_c x 3) -> T x T x 3.
ad::Var realize_few_color(ad::Var weights, ad::Var palette);
/// sigmoid(rgb).
ad::Var realize_free_rgb(ad::Var rgb);
ad::Array realize_texture(const TextureSpec& spec);

/// Logit of a color in (0, 1); inputs are clamped to [1e-6, 1 - 1e-6].
double logit(double p);

/// mean |x[i][j+1] - x[i][j]| + mean |x[i+1][j] - x[i][j]| over all channels of an H x W x C image.
ad::Var total_variation(ad::Var image);

}  // namespace ss3d
