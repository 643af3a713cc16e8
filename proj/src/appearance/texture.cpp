#include "ss3d/appearance/texture.hpp"

#include <algorithm>
#include <cmath>

#include "ss3d/common/error.hpp"

namespace ss3d {

Vec2 TextureAtlas::corner(std::size_t face, int k) const {
  const double x0 = static_cast<double>((face % grid) * patch);
  const double y0 = static_cast<double>((face / grid) * patch);
  const double far = static_cast<double>(patch) - 0.5;
  switch (k) {
    case 0:
      return {x0 + 0.5, y0 + 0.5};
    case 1:
      return {x0 + far, y0 + 0.5};
    default:
      return {x0 + 0.5, y0 + far};
  }
}

ad::Array TextureAtlas::corner_array() const {
  ad::Array out({num_faces, 3, 2});
  for (std::size_t f = 0; f < num_faces; ++f) {
    for (int k = 0; k < 3; ++k) {
      const Vec2 c = corner(f, k);
      out[(3 * f + static_cast<std::size_t>(k)) * 2] = c[0];
      out[(3 * f + static_cast<std::size_t>(k)) * 2 + 1] = c[1];
    }
  }
  return out;
}

void TextureAtlas::apply(TriangleMesh& mesh) const {
  require(mesh.num_faces() == num_faces, "E_SHAPE", "atlas face count does not match mesh");
  const double t = static_cast<double>(size());
  mesh.uvs.clear();
  mesh.face_uvs.clear();
  for (std::size_t f = 0; f < num_faces; ++f) {
    Face uv_face{};
    for (int k = 0; k < 3; ++k) {
      const Vec2 c = corner(f, k);
      uv_face[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(mesh.uvs.size());
      mesh.uvs.emplace_back(c[0] / t, 1.0 - c[1] / t);
    }
    mesh.face_uvs.push_back(uv_face);
  }
}

TextureAtlas make_atlas(std::size_t num_faces, std::size_t patch) {
  require(num_faces > 0, "E_ARG", "atlas needs at least one face");
  require(patch >= 2, "E_ARG", "atlas patch must be at least 2 texels");
  TextureAtlas atlas;
  atlas.patch = patch;
  atlas.num_faces = num_faces;
  atlas.grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(num_faces))));
  while (atlas.grid * atlas.grid < num_faces) ++atlas.grid;
  return atlas;
}

std::size_t TextureSpec::size() const {
  const ad::Array& a = mode == TextureMode::kFewColor ? weights : rgb;
  return a.rank() == 3 ? a.shape()[0] : 0;
}

void TextureSpec::validate() const {
  if (mode == TextureMode::kFewColor) {
    require(palette.rank() == 2 && palette.shape()[1] == 3, "E_SHAPE", "palette must be N_c x 3");
    require(palette.shape()[0] > 0, "E_ARG", "few-color texture needs at least one color");
    require(weights.rank() == 3 && weights.shape()[0] == weights.shape()[1] && weights.shape()[2] == palette.shape()[0],
            "E_SHAPE", "weights must be T x T x N_c");
  } else {
    require(rgb.rank() == 3 && rgb.shape()[0] == rgb.shape()[1] && rgb.shape()[2] == 3, "E_SHAPE",
            "rgb texture must be T x T x 3");
  }
}

TextureSpec TextureSpec::few_color(std::size_t texels, std::size_t colors) {
  TextureSpec s;
  s.mode = TextureMode::kFewColor;
  s.weights = ad::Array({texels, texels, colors});
  s.palette = ad::Array({colors, 3});
  s.validate();
  return s;
}

TextureSpec TextureSpec::free_rgb(std::size_t texels) {
  TextureSpec s;
  s.mode = TextureMode::kFreeRgb;
  s.rgb = ad::Array({texels, texels, 3});
  return s;
}

ad::Var realize_few_color(ad::Var weights, ad::Var palette) {
  require(palette.shape().size() == 2 && palette.shape()[1] == 3, "E_SHAPE", "palette must be N_c x 3");
  const std::size_t colors = palette.shape()[0];
  require(colors > 0, "E_ARG", "few-color texture needs at least one color");
  require(weights.shape().size() == 3 && weights.shape()[2] == colors, "E_SHAPE", "weights must be T x T x N_c");
  const std::size_t h = weights.shape()[0];
  const std::size_t w = weights.shape()[1];
  ad::Var mix = ad::reshape(ad::softmax(weights, 2), {h * w, colors});
  return ad::reshape(ad::matmul(mix, ad::sigmoid(palette)), {h, w, 3});
}

ad::Var realize_free_rgb(ad::Var rgb) { return ad::sigmoid(rgb); }

ad::Array realize_texture(const TextureSpec& spec) {
  spec.validate();
  ad::Tape tape;
  if (spec.mode == TextureMode::kFewColor) {
    return realize_few_color(tape.constant(spec.weights), tape.constant(spec.palette)).value();
  }
  return realize_free_rgb(tape.constant(spec.rgb)).value();
}

double logit(double p) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

ad::Var total_variation(ad::Var image) {
  require(image.shape().size() == 3 && image.shape()[0] >= 2 && image.shape()[1] >= 2, "E_SHAPE",
          "total_variation needs an H x W x C image with H, W >= 2");
  const std::size_t h = image.shape()[0];
  const std::size_t w = image.shape()[1];
  ad::Var dx = ad::slice(image, 1, 1, w) - ad::slice(image, 1, 0, w - 1);
  ad::Var dy = ad::slice(image, 0, 1, h) - ad::slice(image, 0, 0, h - 1);
  return ad::mean(ad::abs(dx)) + ad::mean(ad::abs(dy));
}

}  // namespace ss3d
