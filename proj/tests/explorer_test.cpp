#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "ss3d/autodiff/grad_check.hpp"
#include "ss3d/common/error.hpp"
#include "ss3d/common/parallel.hpp"
#include "ss3d/explore/explorer.hpp"
#include "ss3d/render/renderer.hpp"

using namespace ss3d;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

ExploreConfig default_config() {
  ExploreConfig cfg;
  cfg.viewpoints = viewpoint_dist("car");
  return cfg;
}

double pose_distance(const PoseParams& a, const PoseParams& b) {
  return std::abs(wrap_degrees(a.azimuth, b.azimuth)) + std::abs(a.elevation - b.elevation) +
         std::abs(wrap_degrees(a.inplane, b.inplane));
}

double grid_distance(const FFDGrid& a, const FFDGrid& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.displacements.size(); ++i) total += std::abs(a.displacements[i] - b.displacements[i]);
  for (std::size_t i = 0; i < 3; ++i) total += std::abs(a.log_aspect[i] - b.log_aspect[i]);
  return total;
}

BestRecord initialized_record(const PoseParams& pose, double loss) {
  BestRecord r;
  r.instance = 7;
  r.pose = pose;
  r.loss = loss;
  r.iteration = 0;
  return r;
}

// Frozen silhouette landscape: L1 between the render of a candidate and a fixed target.
struct SilhouetteScene {
  TriangleMesh base = make_icosphere(1);
  FFDLattice lattice{base};
  RenderMesh render = RenderMesh::build(base);
  RenderConfig cfg;
  PoseParams pose{30.0, 15.0, 0.0, 0.0, 0.0, 1.0};
  ad::Array target;

  SilhouetteScene() {
    cfg.height = cfg.width = 16;
    FFDGrid truth;
    truth.log_aspect[0] = 0.3;
    target = silhouette(truth, pose);
  }

  ad::Array silhouette(const FFDGrid& grid, const PoseParams& p) const {
    ad::Tape tape;
    return render_silhouette(render, tape.constant(lattice.deform(grid).vertex_array()), tape.constant(p.to_vector()),
                             cfg)
        .value();
  }

  double loss(const FFDGrid& grid, const PoseParams& p) const {
    const ad::Array s = silhouette(grid, p);
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) total += std::abs(s[i] - target[i]);
    return total / double(s.size());
  }
};

}  // namespace

TEST(ExplorePose, EstimateBetterThanRecordWins) {
  const PoseParams target{40.0, 10.0, 0.0, 0.0, 0.0, 1.0};
  const PoseParams estimated{41.0, 10.0, 0.0, 0.0, 0.0, 1.0};
  const BestRecord record = initialized_record({120.0, 10.0, 0.0, 0.0, 0.0, 1.0}, 1e9);
  ExploreConfig cfg = default_config();
  cfg.k_random = 0;
  cfg.pose_sigma_degrees = 0.0;
  Rng rng = make_rng(1);
  const BestRecord out = explore_pose(
      estimated, record, rng, cfg, [&](const PoseParams& p) { return pose_distance(p, target); }, 5);
  EXPECT_EQ(out.pose, estimated);
  EXPECT_DOUBLE_EQ(out.loss, 1.0);
  EXPECT_EQ(out.iteration, 5);
}

TEST(ExplorePose, AllWorseKeepsRecord) {
  const PoseParams target{40.0, 10.0, 0.0, 0.0, 0.0, 1.0};
  const BestRecord record = initialized_record(target, 0.0);
  Rng rng = make_rng(2);
  const BestRecord out = explore_pose(
      {200.0, 20.0, 0.0, 0.0, 0.0, 1.0}, record, rng, default_config(),
      [&](const PoseParams& p) { return pose_distance(p, target); }, 9);
  EXPECT_EQ(out.pose, target);
  EXPECT_EQ(out.iteration, 0);
  EXPECT_EQ(out.loss, 0.0);
}

TEST(ExplorePose, TiesKeepIncumbent) {
  const BestRecord record = initialized_record({10.0, 5.0, 0.0, 0.0, 0.0, 1.0}, 3.0);
  Rng rng = make_rng(3);
  const BestRecord out =
      explore_pose({50.0, 5.0, 0.0, 0.0, 0.0, 1.0}, record, rng, default_config(), [](const PoseParams&) { return 3.0; }, 4);
  EXPECT_EQ(out.pose, record.pose);
  EXPECT_EQ(out.iteration, 0);
}

TEST(ExplorePose, NonFiniteCandidatesAreExcluded) {
  const PoseParams estimated{41.0, 10.0, 0.0, 0.0, 0.0, 1.0};
  Rng rng = make_rng(4);
  const BestRecord out = explore_pose(
      estimated, BestRecord{}, rng, default_config(),
      [&](const PoseParams& p) { return p == estimated ? std::nan("") : 1.0 + std::abs(p.azimuth) * 1e-3; }, 0);
  EXPECT_TRUE(out.initialized());
  EXPECT_NE(out.pose, estimated);
  EXPECT_TRUE(std::isfinite(out.loss));

  Rng rng2 = make_rng(4);
  const BestRecord none = explore_pose(
      estimated, BestRecord{}, rng2, default_config(), [](const PoseParams&) { return INFINITY; }, 0);
  EXPECT_FALSE(none.initialized());
}

TEST(ExplorePose, PlantedGroundTruthIsRecovered) {
  SilhouetteScene scene;
  const FFDGrid truth = [] {
    FFDGrid g;
    g.log_aspect[0] = 0.3;
    return g;
  }();
  const PoseParams gt = scene.pose;
  Rng rng = make_rng(5);
  const std::vector<PoseParams> extra{gt};
  const BestRecord out = explore_pose(
      {200.0, -10.0, 0.0, 0.0, 0.0, 1.0}, BestRecord{}, rng, default_config(),
      [&](const PoseParams& p) { return scene.loss(truth, p); }, 0, extra);
  EXPECT_EQ(out.loss, scene.loss(truth, gt));
  EXPECT_EQ(out.loss, 0.0);
}

TEST(ExplorePose, CandidatesRespectCropMode) {
  ExploreConfig cfg = default_config();
  cfg.crop.enabled = true;
  cfg.crop.free_inplane = false;
  Rng rng = make_rng(6);
  std::vector<PoseParams> seen;
  explore_pose(
      {10.0, 5.0, 20.0, 0.3, 0.1, 1.5}, initialized_record({12.0, 5.0, 30.0, 0.0, 0.0, 1.0}, 1.0), rng, cfg,
      [&](const PoseParams& p) {
        seen.push_back(p);
        return 1.0;
      },
      1);
  ASSERT_EQ(seen.size(), 2 + cfg.k_random + 1);
  for (const PoseParams& p : seen) {
    EXPECT_EQ(p.inplane, 0.0);
    EXPECT_EQ(p.center_x, 0.0);
    EXPECT_EQ(p.scale, 1.0);
  }
}

TEST(ExploreShape, ZeroDeformationIsOptimalForBaseTarget) {
  SilhouetteScene scene;
  scene.target = scene.silhouette(FFDGrid{}, scene.pose);
  Rng rng = make_rng(7);
  const BestRecord out = explore_shape(
      FFDGrid{}, BestRecord{}, rng, default_config(), [&](const FFDGrid& g) { return scene.loss(g, scene.pose); }, 0);
  EXPECT_EQ(out.loss, 0.0);
  EXPECT_EQ(grid_distance(out.shape, FFDGrid{}), 0.0);
}

TEST(ExploreShape, RecordLossIsNonIncreasingOnFrozenLandscape) {
  SilhouetteScene scene;
  ExploreConfig cfg = default_config();
  Rng rng = make_rng(8);
  Rng estimates = make_rng(9);
  BestRecord record;
  double previous = INFINITY;
  bool improved = false;
  for (int it = 0; it < 100; ++it) {
    const FFDGrid estimate = random_shape(estimates, {0.05, 0.2});
    record = explore_shape(estimate, record, rng, cfg, [&](const FFDGrid& g) { return scene.loss(g, scene.pose); }, it);
    ASSERT_LE(record.loss, previous) << "iteration " << it;
    if (it > 0 && record.loss < previous) improved = true;
    previous = record.loss;
  }
  EXPECT_TRUE(improved);
}

TEST(ExploreShape, PlantedGridIsRecovered) {
  SilhouetteScene scene;
  Rng grng = make_rng(10);
  const FFDGrid truth = random_shape(grng, {0.05, 0.2});
  scene.target = scene.silhouette(truth, scene.pose);
  const std::vector<FFDGrid> extra{truth};
  Rng rng = make_rng(11);
  const BestRecord out = explore_shape(
      FFDGrid{}, BestRecord{}, rng, default_config(), [&](const FFDGrid& g) { return scene.loss(g, scene.pose); }, 0,
      extra);
  EXPECT_EQ(out.loss, 0.0);
  EXPECT_EQ(grid_distance(out.shape, truth), 0.0);
}

TEST(Explore, SeedReproducibleAndInstanceIndependent) {
  SilhouetteScene scene;
  const ExploreConfig cfg = default_config();
  auto run = [&](std::size_t instance, std::uint64_t seed) {
    Rng rng = make_rng(seed, {instance});
    BestRecord r;
    r.instance = instance;
    for (int it = 0; it < 5; ++it) {
      r = explore_pose(
          PoseParams{}, r, rng, cfg, [&](const PoseParams& p) { return scene.loss(FFDGrid{}, p); }, it);
      r = explore_shape(FFDGrid{}, r, rng, cfg, [&](const FFDGrid& g) { return scene.loss(g, r.pose); }, it);
    }
    return r;
  };
  std::vector<BestRecord> serial, parallel(4);
  for (std::size_t i = 0; i < 4; ++i) serial.push_back(run(i, 42));
  parallel_for(4, 4, [&](std::size_t i) { parallel[i] = run(i, 42); });
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(serial[i].pose, parallel[i].pose);
    EXPECT_EQ(serial[i].loss, parallel[i].loss);
    EXPECT_EQ(grid_distance(serial[i].shape, parallel[i].shape), 0.0);
  }
  const BestRecord other = run(0, 43);
  EXPECT_FALSE(other.pose == serial[0].pose && other.loss == serial[0].loss);
}

TEST(RecordMatching, ZeroAtRecord) {
  Rng rng = make_rng(12);
  BestRecord r = initialized_record({33.0, 12.0, -4.0, 0.1, -0.2, 1.1}, 0.5);
  r.shape = random_shape(rng);
  ad::Tape tape;
  const ad::Var loss = record_matching_loss(tape.constant(r.shape.displacements), tape.constant(r.shape.log_aspect),
                                            tape.constant(r.pose.to_vector()), r);
  EXPECT_EQ(loss.value().item(), 0.0);
}

TEST(RecordMatching, AzimuthWraps) {
  EXPECT_NEAR(wrap_degrees(359.0, 1.0), -2.0, 1e-12);
  EXPECT_NEAR(wrap_degrees(1.0, 359.0), 2.0, 1e-12);
  EXPECT_NEAR(wrap_degrees(180.0, 0.0), 180.0, 1e-12);
  EXPECT_NEAR(wrap_degrees(-180.0, 0.0), 180.0, 1e-12);
  ad::Tape tape;
  PoseParams est{359.0, 0.0, 0.0, 0.0, 0.0, 1.0};
  const ad::Var l = pose_matching_loss(tape.constant(est.to_vector()), PoseParams{1.0, 0.0, 0.0, 0.0, 0.0, 1.0});
  EXPECT_NEAR(l.value().item(), 2.0 * kDeg / 6.0, 1e-12);
}

TEST(RecordMatching, MatchesElementwiseOracle) {
  Rng rng = make_rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    BestRecord r = initialized_record({uniform(rng, 0, 360), uniform(rng, -40, 40), uniform(rng, -180, 180),
                                       uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, 0.5, 2)},
                                      1.0);
    r.shape = random_shape(rng);
    const FFDGrid est = random_shape(rng);
    const PoseParams pe{uniform(rng, 0, 360), uniform(rng, -40, 40), uniform(rng, -180, 180), uniform(rng, -0.5, 0.5),
                        uniform(rng, -0.5, 0.5), uniform(rng, 0.5, 2)};
    double shape = 0.0;
    for (std::size_t i = 0; i < 192; ++i) shape += std::abs(est.displacements[i] - r.shape.displacements[i]);
    for (std::size_t i = 0; i < 3; ++i) shape += std::abs(est.log_aspect[i] - r.shape.log_aspect[i]);
    const double pose = (std::abs(wrap_degrees(pe.azimuth, r.pose.azimuth)) * kDeg +
                         std::abs(pe.elevation - r.pose.elevation) * kDeg +
                         std::abs(wrap_degrees(pe.inplane, r.pose.inplane)) * kDeg + std::abs(pe.center_x - r.pose.center_x) +
                         std::abs(pe.center_y - r.pose.center_y) + std::abs(pe.scale - r.pose.scale)) /
                        6.0;
    ad::Tape tape;
    const ad::Var l = record_matching_loss(tape.constant(est.displacements), tape.constant(est.log_aspect),
                                           tape.constant(pe.to_vector()), r);
    EXPECT_NEAR(l.value().item(), shape / 195.0 + pose, 1e-12);
  }
}

TEST(RecordMatching, GradientAndErrors) {
  BestRecord r = initialized_record({350.0, 10.0, 0.0, 0.0, 0.0, 1.0}, 1.0);
  const ad::Array point = PoseParams{5.0, 20.0, 3.0, 0.1, 0.2, 1.3}.to_vector();
  const auto report = ad::grad_check(
      [&](ad::Tape&, ad::Var p) { return pose_matching_loss(p, r.pose); }, point, 1e-6);
  EXPECT_TRUE(report.passed(1e-6));

  ad::Tape tape;
  const ad::Var p = tape.variable(point);
  const ad::Var l = pose_matching_loss(p, r.pose);
  tape.backward(l);
  // 5 degrees est vs 350 recorded: wrapped difference +15 degrees.
  EXPECT_NEAR(p.grad()[0], 1.0 / 6.0, 1e-12);

  BestRecord empty;
  ad::Tape t2;
  try {
    record_matching_loss(t2.constant(empty.shape.displacements), t2.constant(empty.shape.log_aspect),
                         t2.constant(empty.pose.to_vector()), empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_ARG");
  }
}

TEST(RecordStore, RoundTripAndErrors) {
  Rng rng = make_rng(15);
  std::vector<BestRecord> records;
  for (std::uint64_t i = 0; i < 3; ++i) {
    BestRecord r = initialized_record({uniform(rng, 0, 360), 3.0, 1.0, 0.1, 0.2, 1.5}, uniform(rng, 0, 1));
    r.instance = 100 + i;
    r.iteration = std::int64_t(i);
    r.shape = random_shape(rng);
    records.push_back(r);
  }
  records.push_back(BestRecord{});
  records.back().instance = 5;
  std::stringstream buffer;
  write_records(buffer, records);
  const std::vector<BestRecord> back = read_records(buffer);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(back[i].instance, records[i].instance);
    EXPECT_EQ(back[i].iteration, records[i].iteration);
    EXPECT_EQ(back[i].loss, records[i].loss);
    EXPECT_EQ(back[i].pose, records[i].pose);
    EXPECT_EQ(grid_distance(back[i].shape, records[i].shape), 0.0);
  }
  EXPECT_FALSE(back[3].initialized());

  auto code_of = [](const std::string& bytes) {
    std::stringstream in(bytes);
    try {
      read_records(in);
    } catch (const Error& e) {
      return e.code();
    }
    return std::string("none");
  };
  std::stringstream full;
  write_records(full, records);
  const std::string bytes = full.str();
  EXPECT_EQ(code_of("XXXX"), "E_PARSE");
  EXPECT_EQ(code_of(bytes.substr(0, bytes.size() - 3)), "E_PARSE");
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_EQ(code_of(wrong_version), "E_PARSE");

  std::vector<BestRecord> dup{records[0], records[0]};
  std::stringstream d;
  write_records(d, dup);
  EXPECT_EQ(code_of(d.str()), "E_PARSE");
  EXPECT_THROW(load_records("/nonexistent/records.bin"), Error);
}
