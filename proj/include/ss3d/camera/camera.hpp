#pragma once

#include <array>
#include <string>

#include <Eigen/Core>

#include "ss3d/autodiff/ops.hpp"
#include "ss3d/common/random.hpp"

namespace ss3d {

/// Azimuth/elevation sampling law in degrees. Elevation is Uniform(lo, hi);
/// azimuth is Uniform(lo, hi) or Beta(alpha, beta) * scale.
struct ViewpointDist {
  enum class AzimuthLaw { kUniform, kBeta };

  double elevation_lo = 0.0;
  double elevation_hi = 0.0;
  AzimuthLaw azimuth_law = AzimuthLaw::kUniform;
  double azimuth_a = 0.0;  // lower bound, or alpha
  double azimuth_b = 360.0;  // upper bound, or beta
  double azimuth_scale = 180.0;  // Beta law only

  /// Throws E_CONFIG on non-finite bounds, reversed ranges or non-positive Beta parameters.
  void validate() const;
};

/// Built-in table: car, horse, aeroplane, chair. Throws E_CONFIG otherwise.
ViewpointDist viewpoint_dist(const std::string& category);

struct Viewpoint {
  double azimuth = 0.0;    // degrees
  double elevation = 0.0;  // degrees
};

Viewpoint sample_viewpoint(const ViewpointDist& dist, Rng& rng);

/// Stage-2 pose. Angles in degrees; center in normalized device coordinates
/// ([-1, 1], y up); scale multiplies the projected size.
struct PoseParams {
  double azimuth = 0.0;
  double elevation = 0.0;
  double inplane = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;
  double scale = 1.0;

  /// Packs into the internal vector (azimuth, elevation, in-plane in radians; center; scale).
  ad::Array to_vector() const;
  static PoseParams from_vector(const ad::Array& v);
  bool operator==(const PoseParams&) const = default;
};

struct CameraConfig {
  double distance = 2.5;
  double fov_degrees = 30.0;
  double near_plane = 0.1;
  double far_plane = 10.0;

  void validate() const;
  /// 1 / tan(fov / 2).
  double focal() const;
};

/// Largest |elevation| in degrees accepted by the look-at construction.
inline constexpr double kMaxElevationDegrees = 90.0 - 1e-3;

/// Rigid world-to-eye transform: look-at from the sphere of radius `distance`
/// with up (0, 1, 0), then rotation by the in-plane angle about the optical axis.
/// At azimuth 0 and elevation 0 the camera sits on +z. The eye looks down -z.
ad::Var view_matrix(ad::Var pose, const CameraConfig& cfg);
/// Perspective projection with the pose's center offset and scale.
ad::Var projection_matrix(ad::Var pose, const CameraConfig& cfg);
/// projection * view.
ad::Var view_projection(ad::Var pose, const CameraConfig& cfg);
Eigen::Matrix4d pose_to_camera(const PoseParams& pose, const CameraConfig& cfg = {});

/// World-to-eye rotation of a pose (the 3 x 3 block of the view matrix).
Eigen::Matrix3d pose_rotation(const PoseParams& pose);

/// Throws E_GIMBAL when |elevation| >= kMaxElevationDegrees.
void check_elevation(double elevation_degrees);

/// Cropped-dataset pose: center and scale fixed to canonical values; the
/// in-plane angle is free by default or fixed to 0.
struct CropMode {
  bool enabled = false;
  bool free_inplane = true;

  /// 1 for each free entry of the internal pose vector.
  std::array<double, 6> mask() const;
  std::size_t free_parameters() const;
  PoseParams apply(const PoseParams& pose) const;
  /// pose * mask + canonical * (1 - mask); frozen entries receive no gradient.
  ad::Var apply(ad::Var pose) const;
};

}  // namespace ss3d
