#include "ss3d/camera/camera.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/AutoDiff>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

template <class T>
Eigen::Matrix<T, 4, 4> view_matrix_t(const T& az, const T& el, const T& ip, double distance) {
  using std::cos;
  using std::sin;
  const T sa = sin(az), ca = cos(az), se = sin(el), ce = cos(el);
  // Camera basis for the look-at with up (0, 1, 0), in closed form; valid for cos(el) > 0.
  Eigen::Matrix<T, 3, 3> look;
  look << ca, T(0.0), -sa,       //
      -sa * se, ce, -ca * se,    //
      sa * ce, se, ca * ce;
  const T si = sin(ip), ci = cos(ip);
  Eigen::Matrix<T, 3, 3> roll;
  roll << ci, -si, T(0.0),  //
      si, ci, T(0.0),       //
      T(0.0), T(0.0), T(1.0);
  Eigen::Matrix<T, 4, 4> m = Eigen::Matrix<T, 4, 4>::Zero();
  m.template block<3, 3>(0, 0) = roll * look;
  m(2, 3) = T(-distance);
  m(3, 3) = T(1.0);
  return m;
}

ad::Array basis_matrix(int row, int col, double value) {
  ad::Array m({4, 4});
  m[static_cast<std::size_t>(4 * row + col)] = value;
  return m;
}

}  // namespace

void ViewpointDist::validate() const {
  for (double v : {elevation_lo, elevation_hi, azimuth_a, azimuth_b, azimuth_scale}) {
    require(std::isfinite(v), "E_CONFIG", "viewpoint distribution parameters must be finite");
  }
  require(elevation_lo <= elevation_hi, "E_CONFIG", "elevation range is reversed");
  require(std::abs(elevation_lo) < kMaxElevationDegrees && std::abs(elevation_hi) < kMaxElevationDegrees,
          "E_CONFIG", "elevation range reaches the camera singularity");
  if (azimuth_law == AzimuthLaw::kBeta) {
    require(azimuth_a > 0.0 && azimuth_b > 0.0, "E_CONFIG", "Beta parameters must be positive");
  } else {
    require(azimuth_a <= azimuth_b, "E_CONFIG", "azimuth range is reversed");
  }
}

ViewpointDist viewpoint_dist(const std::string& category) {
  ViewpointDist d;
  if (category == "car" || category == "chair") {
    d.elevation_lo = 0.0;
    d.elevation_hi = 30.0;
    d.azimuth_law = ViewpointDist::AzimuthLaw::kUniform;
    d.azimuth_a = 0.0;
    d.azimuth_b = 360.0;
  } else if (category == "horse" || category == "aeroplane") {
    d.elevation_lo = category == "horse" ? -10.0 : -60.0;
    d.elevation_hi = category == "horse" ? 10.0 : 60.0;
    d.azimuth_law = ViewpointDist::AzimuthLaw::kBeta;
    d.azimuth_a = 1.5;
    d.azimuth_b = 1.5;
    d.azimuth_scale = 180.0;
  } else {
    fail("E_CONFIG", "unknown category '" + category + "'");
  }
  return d;
}

Viewpoint sample_viewpoint(const ViewpointDist& dist, Rng& rng) {
  dist.validate();
  Viewpoint v;
  if (dist.azimuth_law == ViewpointDist::AzimuthLaw::kUniform) {
    v.azimuth = uniform(rng, dist.azimuth_a, dist.azimuth_b);
  } else {
    const double x = std::gamma_distribution<double>(dist.azimuth_a, 1.0)(rng);
    const double y = std::gamma_distribution<double>(dist.azimuth_b, 1.0)(rng);
    v.azimuth = dist.azimuth_scale * x / (x + y);
  }
  v.elevation = uniform(rng, dist.elevation_lo, dist.elevation_hi);
  return v;
}

ad::Array PoseParams::to_vector() const {
  return ad::Array({6}, {azimuth * kDegToRad, elevation * kDegToRad, inplane * kDegToRad, center_x, center_y, scale});
}

PoseParams PoseParams::from_vector(const ad::Array& v) {
  require(v.size() == 6, "E_SHAPE", "pose vector must have 6 entries");
  return {v[0] / kDegToRad, v[1] / kDegToRad, v[2] / kDegToRad, v[3], v[4], v[5]};
}

void CameraConfig::validate() const {
  require(std::isfinite(distance) && distance > 0.0, "E_CONFIG", "camera distance must be positive");
  require(fov_degrees > 0.0 && fov_degrees < 180.0, "E_CONFIG", "field of view must be in (0, 180) degrees");
  require(near_plane > 0.0 && far_plane > near_plane, "E_CONFIG", "need 0 < near < far");
}

double CameraConfig::focal() const { return 1.0 / std::tan(0.5 * fov_degrees * kDegToRad); }

void check_elevation(double elevation_degrees) {
  require(std::isfinite(elevation_degrees) && std::abs(elevation_degrees) < kMaxElevationDegrees, "E_GIMBAL",
          "elevation " + std::to_string(elevation_degrees) + " is at the look-at singularity");
}

ad::Var view_matrix(ad::Var pose, const CameraConfig& cfg) {
  cfg.validate();
  require(pose.size() == 6, "E_SHAPE", "pose vector must have 6 entries");
  const ad::Array& p = pose.value();
  check_elevation(p[1] / kDegToRad);

  using Scalar = Eigen::AutoDiffScalar<Eigen::Vector3d>;
  const Scalar az(p[0], 3, 0), el(p[1], 3, 1), ip(p[2], 3, 2);
  const Eigen::Matrix<Scalar, 4, 4> m = view_matrix_t(az, el, ip, cfg.distance);
  ad::Array value({4, 4});
  std::array<double, 48> jacobian{};  // d m(r, c) / d angle k at [(4 r + c) * 3 + k]
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const std::size_t idx = static_cast<std::size_t>(4 * r + c);
      value[idx] = m(r, c).value();
      if (m(r, c).derivatives().size() == 3) {
        for (int k = 0; k < 3; ++k) jacobian[idx * 3 + static_cast<std::size_t>(k)] = m(r, c).derivatives()[k];
      }
    }
  }
  return pose.tape()->record(std::move(value), {pose}, [jacobian](const ad::Array&, const ad::Array& g, ad::ParentGrads pg) {
    ad::Array& gp = *pg[0];
    for (std::size_t idx = 0; idx < 16; ++idx) {
      for (std::size_t k = 0; k < 3; ++k) gp[k] += g[idx] * jacobian[idx * 3 + k];
    }
  });
}

ad::Var projection_matrix(ad::Var pose, const CameraConfig& cfg) {
  cfg.validate();
  require(pose.size() == 6, "E_SHAPE", "pose vector must have 6 entries");
  ad::Tape& tape = *pose.tape();
  const double n = cfg.near_plane, f = cfg.far_plane, focal = cfg.focal();
  ad::Array fixed({4, 4});
  fixed[10] = -(f + n) / (f - n);
  fixed[11] = -2.0 * f * n / (f - n);
  fixed[14] = -1.0;
  ad::Array scale_part = basis_matrix(0, 0, focal);
  scale_part[5] = focal;
  ad::Var flat = ad::reshape(pose, {6});
  return tape.constant(fixed) + ad::slice(flat, 0, 5, 6) * tape.constant(scale_part) +
         ad::slice(flat, 0, 3, 4) * tape.constant(basis_matrix(0, 2, -1.0)) +
         ad::slice(flat, 0, 4, 5) * tape.constant(basis_matrix(1, 2, -1.0));
}

ad::Var view_projection(ad::Var pose, const CameraConfig& cfg) {
  return ad::matmul(projection_matrix(pose, cfg), view_matrix(pose, cfg));
}

Eigen::Matrix4d pose_to_camera(const PoseParams& pose, const CameraConfig& cfg) {
  ad::Tape tape;
  const ad::Array m = view_projection(tape.constant(pose.to_vector()), cfg).value();
  Eigen::Matrix4d out;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out(r, c) = m[static_cast<std::size_t>(4 * r + c)];
  }
  return out;
}

Eigen::Matrix3d pose_rotation(const PoseParams& pose) {
  return view_matrix_t(pose.azimuth * kDegToRad, pose.elevation * kDegToRad, pose.inplane * kDegToRad, 1.0)
      .block<3, 3>(0, 0);
}

std::array<double, 6> CropMode::mask() const {
  if (!enabled) return {1, 1, 1, 1, 1, 1};
  return {1, 1, free_inplane ? 1.0 : 0.0, 0, 0, 0};
}

std::size_t CropMode::free_parameters() const {
  std::size_t n = 0;
  for (double m : mask()) n += m > 0.0;
  return n;
}

PoseParams CropMode::apply(const PoseParams& pose) const {
  if (!enabled) return pose;
  PoseParams out = pose;
  if (!free_inplane) out.inplane = 0.0;
  out.center_x = 0.0;
  out.center_y = 0.0;
  out.scale = 1.0;
  return out;
}

ad::Var CropMode::apply(ad::Var pose) const {
  if (!enabled) return pose;
  ad::Tape& tape = *pose.tape();
  const std::array<double, 6> m = mask();
  ad::Array keep({6});
  ad::Array canonical({6});
  for (std::size_t i = 0; i < 6; ++i) keep[i] = m[i];
  canonical[5] = 1.0;
  return ad::reshape(pose, {6}) * tape.constant(keep) + tape.constant(canonical);
}

}  // namespace ss3d
