#include "ss3d/explore/explorer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

constexpr char kMagic[4] = {'S', 'S', '3', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr double kElevationLimit = kMaxElevationDegrees - 1e-3;

static_assert(std::endian::native == std::endian::little, "record files assume a little-endian host");

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(in), "E_PARSE", "truncated record file");
  return v;
}

// Keeps the first strict minimum over finite losses.
template <class T>
struct ArgMin {
  bool found = false;
  T value;
  double loss = std::numeric_limits<double>::infinity();
  bool is_incumbent = false;

  void offer(const T& candidate, double l, bool incumbent = false) {
    if (!std::isfinite(l)) return;
    if (!found || l < loss) {
      value = candidate;
      found = true;
      loss = l;
      is_incumbent = incumbent;
    }
  }
};

double wrap_radians(double d) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = d - two_pi * std::floor(d / two_pi);  // [0, 2 pi)
  if (w > std::numbers::pi) w -= two_pi;
  return w;
}

}  // namespace

void ExploreConfig::validate() const {
  require(std::isfinite(pose_sigma_degrees) && pose_sigma_degrees >= 0.0, "E_CONFIG",
          "pose perturbation must be finite and non-negative");
  require(std::isfinite(shape_sigma) && shape_sigma >= 0.0, "E_CONFIG",
          "shape perturbation must be finite and non-negative");
  viewpoints.validate();
}

BestRecord explore_pose(const PoseParams& estimated, BestRecord record, Rng& rng, const ExploreConfig& cfg,
                        const PoseEvaluator& evaluate, std::int64_t iteration, std::span<const PoseParams> extra) {
  cfg.validate();
  ArgMin<PoseParams> best;
  auto offer = [&](const PoseParams& p, bool incumbent = false) {
    const PoseParams c = cfg.crop.apply(p);
    best.offer(c, evaluate(c), incumbent);
  };
  if (record.initialized()) offer(record.pose, true);
  offer(estimated);
  for (const PoseParams& p : extra) offer(p);
  // Draws happen unconditionally so the stream does not depend on losses.
  for (std::size_t k = 0; k < cfg.k_random; ++k) {
    const Viewpoint v = sample_viewpoint(cfg.viewpoints, rng);
    PoseParams p = estimated;
    p.azimuth = v.azimuth;
    p.elevation = std::clamp(v.elevation, -kElevationLimit, kElevationLimit);
    offer(p);
  }
  PoseParams p = record.initialized() ? record.pose : estimated;
  p.azimuth += gaussian(rng, cfg.pose_sigma_degrees);
  p.elevation = std::clamp(p.elevation + gaussian(rng, cfg.pose_sigma_degrees), -kElevationLimit, kElevationLimit);
  p.inplane += gaussian(rng, cfg.pose_sigma_degrees);
  offer(p);

  if (!best.found) return record;
  record.loss = best.loss;
  if (!best.is_incumbent) {
    record.pose = best.value;
    record.iteration = iteration;
  }
  return record;
}

BestRecord explore_shape(const FFDGrid& estimated, BestRecord record, Rng& rng, const ExploreConfig& cfg,
                         const ShapeEvaluator& evaluate, std::int64_t iteration, std::span<const FFDGrid> extra) {
  cfg.validate();
  ArgMin<FFDGrid> best;
  auto offer = [&](const FFDGrid& g, bool incumbent = false) { best.offer(g, evaluate(g), incumbent); };
  if (record.initialized()) offer(record.shape, true);
  offer(estimated);
  for (const FFDGrid& g : extra) offer(g);
  offer(perturb_shape(record.initialized() ? record.shape : estimated, cfg.shape_sigma, rng));
  for (std::size_t k = 0; k < cfg.k_random; ++k) offer(random_shape(rng, cfg.shape_prior));

  if (!best.found) return record;
  record.loss = best.loss;
  if (!best.is_incumbent) {
    record.shape = best.value;
    record.iteration = iteration;
  }
  return record;
}

double wrap_degrees(double a, double b) { return wrap_radians((a - b) * std::numbers::pi / 180.0) * 180.0 / std::numbers::pi; }

ad::Var shape_matching_loss(ad::Var displacements, ad::Var log_aspect, const FFDGrid& best) {
  require(displacements.size() == FFDGrid::kPoints * 3 && log_aspect.size() == 3, "E_SHAPE",
          "shape estimate must have 192 displacements and 3 log-aspects");
  ad::Tape& tape = *displacements.tape();
  const ad::Var d = ad::reshape(displacements, {FFDGrid::kPoints * 3}) -
                    tape.constant(ad::Array({FFDGrid::kPoints * 3}, best.displacements.values()));
  const ad::Var a = ad::reshape(log_aspect, {3}) - tape.constant(best.log_aspect);
  return (ad::sum(ad::abs(d)) + ad::sum(ad::abs(a))) / static_cast<double>(FFDGrid::kPoints * 3 + 3);
}

ad::Var pose_matching_loss(ad::Var pose, const PoseParams& best) {
  require(pose.size() == 6, "E_SHAPE", "pose estimate must have 6 entries");
  const ad::Array target = best.to_vector();
  // Shifting the target by whole turns leaves the gradient of the difference untouched.
  ad::Array shifted = target;
  for (std::size_t i : {std::size_t(0), std::size_t(2)}) {
    const double d = pose.value()[i] - target[i];
    shifted[i] = pose.value()[i] - wrap_radians(d);
  }
  const ad::Var diff = ad::reshape(pose, {6}) - pose.tape()->constant(shifted);
  return ad::mean(ad::abs(diff));
}

ad::Var record_matching_loss(ad::Var displacements, ad::Var log_aspect, ad::Var pose, const BestRecord& record) {
  require(record.initialized(), "E_ARG", "record for instance " + std::to_string(record.instance) + " is uninitialized");
  return shape_matching_loss(displacements, log_aspect, record.shape) + pose_matching_loss(pose, record.pose);
}

void write_records(std::ostream& out, const std::vector<BestRecord>& records) {
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, records.size());
  for (const BestRecord& r : records) {
    write_pod<std::uint64_t>(out, r.instance);
    write_pod<std::int64_t>(out, r.iteration);
    write_pod<double>(out, r.loss);
    for (double v : r.shape.displacements.data()) write_pod<double>(out, v);
    for (double v : r.shape.log_aspect.data()) write_pod<double>(out, v);
    for (double v : {r.pose.azimuth, r.pose.elevation, r.pose.inplane, r.pose.center_x, r.pose.center_y, r.pose.scale}) {
      write_pod<double>(out, v);
    }
  }
  require(static_cast<bool>(out), "E_IO", "failed to write records");
}

std::vector<BestRecord> read_records(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, 4) == 0, "E_PARSE", "not a record file");
  const auto version = read_pod<std::uint32_t>(in);
  require(version == kVersion, "E_PARSE", "unsupported record file version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(in);
  std::vector<BestRecord> records;
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    BestRecord r;
    r.instance = read_pod<std::uint64_t>(in);
    require(seen.insert(r.instance).second, "E_PARSE", "duplicate record id " + std::to_string(r.instance));
    r.iteration = read_pod<std::int64_t>(in);
    r.loss = read_pod<double>(in);
    for (double& v : r.shape.displacements.data()) v = read_pod<double>(in);
    for (double& v : r.shape.log_aspect.data()) v = read_pod<double>(in);
    for (double* v : {&r.pose.azimuth, &r.pose.elevation, &r.pose.inplane, &r.pose.center_x, &r.pose.center_y,
                      &r.pose.scale}) {
      *v = read_pod<double>(in);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_records(const std::vector<BestRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "E_IO", "cannot open " + path);
  write_records(out, records);
}

std::vector<BestRecord> load_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "E_IO", "cannot open " + path);
  return read_records(in);
}

}  // namespace ss3d
