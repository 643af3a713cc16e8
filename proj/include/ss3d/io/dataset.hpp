#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ss3d/appearance/background.hpp"
#include "ss3d/appearance/texture.hpp"
#include "ss3d/camera/camera.hpp"
#include "ss3d/render/renderer.hpp"

namespace ss3d {

struct Instance {
  std::string id;
  ad::Array image;  // H x W x 3 in [0, 1]
  std::optional<PoseParams> pose;
};

struct Dataset {
  std::vector<Instance> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::size_t height() const;
  std::size_t width() const;
  /// Throws E_SHAPE for mixed image sizes and E_ARG for duplicate ids.
  void validate() const;
};

/// Reads `manifest` (relative to `directory`) with lines
/// `id<TAB>path[<TAB>azimuth<TAB>elevation<TAB>inplane]`; '#' lines are comments.
/// Image paths are relative to `directory`. Throws E_ARG for an empty manifest or
/// duplicate id, E_IO for a missing image, E_SHAPE for a size mismatch and
/// E_PARSE for a malformed line.
Dataset load_dataset(const std::string& directory, const std::string& manifest = "manifest.tsv");
/// Writes `<id>.png` per instance and the manifest.
void save_dataset(const Dataset& dataset, const std::string& directory, const std::string& manifest = "manifest.tsv");

/// Textured ground-truth object for synthetic renders.
struct SyntheticScene {
  TriangleMesh mesh;
  TextureAtlas atlas;
  ad::Array texture;  // T x T x 3
  StripeBackground background = StripeBackground::constant(8, 0.5, 0.5, 0.5);
};

/// Icosphere scaled to the given full extents (x, y, z), then fit to the unit cube.
TriangleMesh make_ellipsoid(const Vec3& extents, int subdivisions);
/// Ellipsoid whose x and y extents scale by (1 + taper * z) along its length.
TriangleMesh make_tapered_ellipsoid(const Vec3& extents, double taper, int subdivisions);
/// Atlas for `mesh` with each face patch filled by paint(face centroid).
SyntheticScene make_scene(const TriangleMesh& mesh, std::size_t patch, const std::function<Vec3(const Vec3&)>& paint);

struct SyntheticOptions {
  std::size_t views = 0;
  ViewpointDist dist;
  std::uint64_t seed = 0;
  RenderConfig render;
  bool directional_light = true;
  LightRanges lights;
  /// Round to 8-bit levels so a PNG round trip is exact.
  bool quantize = true;
};

/// Renders views with poses drawn from the distribution (in-plane 0, centered,
/// scale 1) and recorded in the instances. View i uses stream (seed, i).
Dataset make_synthetic_dataset(const SyntheticScene& scene, const SyntheticOptions& options);

struct NamedPose {
  std::string id;
  PoseParams pose;
};

struct PoseEvalResult {
  std::vector<std::string> ids;
  std::vector<double> errors;  // radians, in [0, pi]
  double accuracy = 0.0;       // fraction of errors below pi / 6
};

/// Geodesic distance arccos((tr(R1^T R2) - 1) / 2) between pose rotations.
double rotation_error(const PoseParams& a, const PoseParams& b);
/// Matches entries by id; throws E_ARG unless both sides hold the same ids once each.
PoseEvalResult eval_pose(const std::vector<NamedPose>& predicted, const std::vector<NamedPose>& truth);

/// Ground-truth poses of a dataset; throws E_ARG when an instance has none.
std::vector<NamedPose> dataset_poses(const Dataset& dataset);
/// `id<TAB>azimuth<TAB>elevation<TAB>inplane<TAB>center_x<TAB>center_y<TAB>scale` lines.
void save_poses(const std::vector<NamedPose>& poses, const std::string& path);
std::vector<NamedPose> load_poses(const std::string& path);

}  // namespace ss3d
