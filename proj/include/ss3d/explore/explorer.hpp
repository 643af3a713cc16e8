#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ss3d/camera/camera.hpp"
#include "ss3d/deform/deformation.hpp"

namespace ss3d {

/// Best shape and pose found so far for one training instance.
struct BestRecord {
  std::uint64_t instance = 0;
  FFDGrid shape;
  PoseParams pose;
  double loss = std::numeric_limits<double>::infinity();
  /// Iteration of the last replacement; -1 before the first.
  std::int64_t iteration = -1;

  bool initialized() const { return iteration >= 0; }
};

struct ExploreConfig {
  std::size_t k_random = 4;
  double pose_sigma_degrees = 5.0;
  double shape_sigma = 0.02;  // lattice units
  ViewpointDist viewpoints;
  ShapePrior shape_prior;
  /// Applied to every pose candidate.
  CropMode crop;

  void validate() const;
};

using PoseEvaluator = std::function<double(const PoseParams&)>;
using ShapeEvaluator = std::function<double(const FFDGrid&)>;

/// Evaluates the recorded pose (when initialized), the estimate, `extra`,
/// k_random prior draws and a Gaussian perturbation of the recorded pose
/// (of the estimate before initialization), in that order. The first strict
/// minimum wins, so ties keep the incumbent. Non-finite losses are skipped. Random
/// draws keep the estimate's in-plane angle, center and scale.
BestRecord explore_pose(const PoseParams& estimated, BestRecord record, Rng& rng, const ExploreConfig& cfg,
                        const PoseEvaluator& evaluate, std::int64_t iteration,
                        std::span<const PoseParams> extra = {});

/// Same contract over FFD grids: recorded, estimate, `extra`, a perturbation of
/// the recorded displacements and k_random prior draws.
BestRecord explore_shape(const FFDGrid& estimated, BestRecord record, Rng& rng, const ExploreConfig& cfg,
                         const ShapeEvaluator& evaluate, std::int64_t iteration,
                         std::span<const FFDGrid> extra = {});

/// a - b in degrees wrapped to (-180, 180].
double wrap_degrees(double a, double b);

/// Mean absolute difference over the 192 displacements and 3 log-aspects.
ad::Var shape_matching_loss(ad::Var displacements, ad::Var log_aspect, const FFDGrid& best);
/// Mean absolute difference over the internal pose vector (angles in radians),
/// with azimuth and in-plane differences wrapped to (-pi, pi].
ad::Var pose_matching_loss(ad::Var pose, const PoseParams& best);
/// shape_matching_loss + pose_matching_loss; E_ARG for an uninitialized record.
ad::Var record_matching_loss(ad::Var displacements, ad::Var log_aspect, ad::Var pose, const BestRecord& record);

/// Record store file: magic "SS3R", u32 version, u64 count, then per record
/// u64 id, i64 iteration, f64 loss, 192 + 3 f64 shape values, 6 f64 pose values.
void write_records(std::ostream& out, const std::vector<BestRecord>& records);
/// E_PARSE on a bad header, truncation or duplicate ids.
std::vector<BestRecord> read_records(std::istream& in);
void save_records(const std::vector<BestRecord>& records, const std::string& path);
std::vector<BestRecord> load_records(const std::string& path);

}  // namespace ss3d
