#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ss3d/io/config.hpp"
#include "ss3d/mesh/triangle_mesh.hpp"
#include "ss3d/render/renderer.hpp"
#include "ss3d/train/adam.hpp"

namespace ss3d {

struct RemeshConfig {
  std::size_t iterations = 500;
  double w_silhouette = 1.0;
  /// Weight of the squared coefficient of variation of face areas.
  double w_variance = 0.1;
  /// Weight of the surface area relative to the input's.
  double w_area = 0.01;
  int subdivisions = 2;
  std::vector<double> view_azimuths{0, 45, 90, 135, 180, 225, 270, 315};
  std::vector<double> view_elevations{-30, 30};
  RenderConfig render;
  double learning_rate = 2e-3;
  AdamConfig adam;
  std::size_t threads = 1;
  double iou_target = 0.9;

  static RemeshConfig from_config(const KeyValueConfig& kv);
  void validate() const;
};

struct RemeshResult {
  TriangleMesh mesh;
  double iou = 0.0;  // hard-mask IoU against the input over the configured views
  double cv_before = 0.0;
  double cv_after = 0.0;
  /// True when the IoU target was not reached; `mesh` is then the lowest-loss iterate.
  bool warning = false;
  std::vector<double> history;
};

/// Fits a fresh icosphere, initialized on the input's bounding box, to the input's
/// soft silhouettes while evening out face areas and limiting surface area.
RemeshResult postprocess_remesh(const TriangleMesh& base, const RemeshConfig& cfg);

/// Mean hard-mask IoU of two meshes over poses.
double mean_silhouette_iou(const TriangleMesh& a, const TriangleMesh& b, const std::vector<PoseParams>& poses,
                           const RenderConfig& render, std::size_t samples = 4);

}  // namespace ss3d
