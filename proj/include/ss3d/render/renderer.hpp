#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>

#include "ss3d/appearance/texture.hpp"
#include "ss3d/camera/camera.hpp"
#include "ss3d/common/random.hpp"
#include "ss3d/mesh/triangle_mesh.hpp"

namespace ss3d {

/// Soft rasterizer settings. `sigma` is the coverage sharpness in squared
/// pixels; the depth temperature is gamma_ratio * sigma in normalized depth.
struct RenderConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  double sigma = 0.5;
  double gamma_ratio = 2e-3;
  std::size_t supersample = 1;
  CameraConfig camera;

  double gamma() const { return gamma_ratio * sigma; }
  /// Throws E_CONFIG unless H, W >= 8, sigma > 0, gamma_ratio > 0 and supersample >= 1.
  void validate() const;
};

/// Directional light in eye space (+z toward the viewer). Shading is
/// ambient + directional * max(0, n . direction).
struct Lighting {
  double ambient = 1.0;
  double directional = 0.0;
  Vec3 direction = Vec3(0, 0, 1);

  /// (ambient, directional, dx, dy, dz)
  ad::Array to_array() const;
  void validate() const;
};

struct LightRanges {
  double ambient_lo = 0.5;
  double ambient_hi = 0.7;
  double directional_lo = 0.2;
  double directional_hi = 0.3;
};

/// Direction uniform on the hemisphere z >= 0, intensities uniform in the ranges.
Lighting sample_light(Rng& rng, const LightRanges& ranges = {});

/// Constant per-mesh render data: connectivity and atlas texel corners.
struct RenderMesh {
  std::vector<Face> faces;
  FaceCorners corners;
  ad::Array uv;  // F x 3 x 2 texel positions
  /// Per mesh edge: its two vertices and the opposite vertex in each adjacent face (-1 on a boundary).
  std::vector<std::array<std::int64_t, 4>> edges;
  std::size_t num_vertices = 0;

  static RenderMesh build(const TriangleMesh& mesh, const TextureAtlas& atlas);
  /// Without texture coordinates; usable for silhouettes only.
  static RenderMesh build(const TriangleMesh& mesh);
};

/// Per-vertex screen data: pixel x, pixel y (y down) and normalized nearness
/// (far - depth) / (far - near) in column 2; eye-space positions.
struct ScreenVertices {
  ad::Var screen;
  ad::Var eye;
};

/// Projects (N x 3) vertices with the camera of a pose vector. Throws
/// E_NONFINITE on non-finite vertices and E_FRUSTUM for vertices not in front of the near plane.
ScreenVertices project_vertices(ad::Var vertices, ad::Var pose, const RenderConfig& cfg);

/// (N x 3) area-weighted vertex normals (unnormalized) from eye-space positions.
ad::Var vertex_normals(ad::Var eye, const FaceCorners& corners, std::size_t num_vertices);

struct RenderOutput {
  ad::Var image;  // H x W x 3, composited over the background
  ad::Var alpha;  // H x W soft coverage
};

/// Renders a textured mesh. `texture` is T x T x 3 in [0, 1] laid out by the
/// atlas used for `mesh`. Without a light the shading is 1.
RenderOutput rasterize(const RenderMesh& mesh, ad::Var vertices, ad::Var texture, ad::Var pose,
                       std::optional<ad::Var> light, ad::Var background, const RenderConfig& cfg);

/// Soft coverage only.
ad::Var render_silhouette(const RenderMesh& mesh, ad::Var vertices, ad::Var pose, const RenderConfig& cfg);

/// Low-level op on projected data: (H x W x 4) foreground color and coverage.
/// Coverage is sigmoid(+-d^2 / sigma) with d the distance to the boundary of
/// the projected union: the nearest face outside it, the nearest exposed
/// contour edge inside it. Contour edges are boundary edges and edges whose
/// two faces project to the same side; an edge is exposed when the point just
/// beyond its midpoint is uncovered. Colors blend faces by per-face soft
/// coverage and softmax depth.
/// `normals` and `light` must both be given or both be omitted; `texture`
/// may be omitted for coverage only.
ad::Var soft_raster(const RenderMesh& mesh, ad::Var screen, std::optional<ad::Var> normals,
                    std::optional<ad::Var> texture, std::optional<ad::Var> light, std::size_t height,
                    std::size_t width, double sigma, double gamma);

/// Binary coverage of pixel sub-samples: ((H s) x (W s)), 1 where a sample
/// center lies inside some face.
ad::Array hard_mask(const TriangleMesh& mesh, const PoseParams& pose, const RenderConfig& cfg, std::size_t samples);

/// |A and B| / |A or B| for binary masks of equal shape (1 when both are empty).
double mask_iou(const ad::Array& a, const ad::Array& b);

/// Axis-aligned crop in pixel coordinates [x0, x1) x [y0, y1).
struct CropBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
};

/// Bilinear resample of the box into an out_h x out_w image. Throws E_ARG on an
/// empty box or one outside the image.
ad::Var crop_resize(ad::Var image, const CropBox& box, std::size_t out_h, std::size_t out_w);

}  // namespace ss3d
