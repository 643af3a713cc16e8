#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "ss3d/autodiff/grad_check.hpp"
#include "ss3d/common/error.hpp"
#include "ss3d/mesh/obj_io.hpp"
#include "ss3d/mesh/smoothness.hpp"
#include "ss3d/mesh/symmetry.hpp"
#include "ss3d/mesh/triangle_mesh.hpp"
#include "test_meshes.hpp"

using namespace ss3d;
using ss3d::testing::box;
using ss3d::testing::flat_grid;

namespace {

ad::Array apply_laplacian(const TriangleMesh& mesh) {
  ad::Tape tape;
  const ad::SparseMatrix lap = graph_laplacian(mesh);
  return laplacian_apply(lap, tape.constant(mesh.vertex_array())).value();
}

TriangleMesh randomly_offset(TriangleMesh mesh, std::uint64_t seed, double amount) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amount, amount);
  for (Vec3& v : mesh.vertices) v += Vec3(u(rng), u(rng), u(rng));
  return mesh;
}

SmoothnessConfig all_terms() {
  SmoothnessConfig cfg;
  cfg.laplacian_tolerance = 0.05;
  cfg.angle_tolerance = 0.1;
  cfg.lambda_laplacian_hinge = 1.0;
  cfg.lambda_laplacian_sq = 0.7;
  cfg.lambda_angle_hinge = 0.3;
  cfg.lambda_angle_sq = 0.5;
  return cfg;
}

// Dihedral angle of each interior edge by brute-force face-pair search.
std::vector<double> edge_angles_oracle(const TriangleMesh& m) {
  std::vector<double> angles;
  auto normal = [&](const Face& f) {
    return (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]).normalized();
  };
  for (std::size_t a = 0; a < m.faces.size(); ++a) {
    for (std::size_t b = a + 1; b < m.faces.size(); ++b) {
      int shared = 0;
      for (auto i : m.faces[a]) {
        for (auto j : m.faces[b]) shared += i == j;
      }
      if (shared == 2) {
        const Vec3 na = normal(m.faces[a]);
        const Vec3 nb = normal(m.faces[b]);
        angles.push_back(std::atan2(na.cross(nb).norm(), na.dot(nb)));
      }
    }
  }
  return angles;
}

}  // namespace

TEST(Icosphere, IcosahedronCounts) {
  const TriangleMesh m = make_icosphere(0);
  EXPECT_EQ(m.num_vertices(), 12u);
  EXPECT_EQ(m.num_faces(), 20u);
}

TEST(Icosphere, FirstSubdivisionCounts) {
  const TriangleMesh m = make_icosphere(1);
  EXPECT_EQ(m.num_vertices(), 42u);
  EXPECT_EQ(m.num_faces(), 80u);
  EXPECT_EQ(MeshTopology::build(m).edges.size(), 120u);
  EXPECT_EQ(euler_characteristic(m), 2);
}

TEST(Icosphere, ManifoldUnitRadiusOutwardAtEveryLevel) {
  for (int level = 0; level <= 4; ++level) {
    const TriangleMesh m = make_icosphere(level);
    EXPECT_EQ(euler_characteristic(m), 2) << level;
    EXPECT_TRUE(MeshTopology::build(m).closed()) << level;
    for (const Vec3& v : m.vertices) EXPECT_NEAR(v.norm(), 1.0, 1e-9);
    for (const Face& f : m.faces) {
      const Vec3 c = (m.vertices[f[0]] + m.vertices[f[1]] + m.vertices[f[2]]) / 3.0;
      const Vec3 n = (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]);
      EXPECT_GT(n.dot(c), 0.0);
    }
  }
}

TEST(Icosphere, RejectsTooManySubdivisions) {
  try {
    make_icosphere(6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_ARG");
  }
}

TEST(Topology, RejectsNonManifoldEdge) {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0), Vec3(0, 0, 1)};
  m.faces = {{0, 1, 2}, {1, 0, 3}, {0, 1, 4}};
  try {
    MeshTopology::build(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_NONMANIFOLD");
  }
}

TEST(FitUnitCube, ScalesAndCentersCube) {
  const TriangleMesh fit = fit_unit_cube(box(4, 4, 4, Vec3(3, -7, 11)));
  const TriangleMesh expected = box(1, 1, 1);
  for (std::size_t i = 0; i < fit.num_vertices(); ++i) {
    EXPECT_LT((fit.vertices[i] - expected.vertices[i]).norm(), 1e-12);
  }
}

TEST(FitUnitCube, IdempotentAndPreservesRatios) {
  const TriangleMesh once = fit_unit_cube(box(2, 1, 1, Vec3(0.3, 0.2, 0.1)));
  const TriangleMesh twice = fit_unit_cube(once);
  const TriangleMesh expected = box(1, 0.5, 0.5);
  for (std::size_t i = 0; i < once.num_vertices(); ++i) {
    EXPECT_LT((once.vertices[i] - expected.vertices[i]).norm(), 1e-12);
    EXPECT_LT((twice.vertices[i] - once.vertices[i]).norm(), 1e-15);
  }
}

TEST(FitUnitCube, RejectsZeroExtent) {
  TriangleMesh m;
  m.vertices = {Vec3(1, 1, 1), Vec3(1, 1, 1), Vec3(1, 1, 1)};
  m.faces = {{0, 1, 2}};
  EXPECT_THROW(fit_unit_cube(m), Error);
}

TEST(FitUnitCube, DifferentiableVersionMatchesAndPassesGradCheck) {
  const TriangleMesh m = randomly_offset(make_icosphere(0), 3, 0.2);
  ad::Tape tape;
  const ad::Array fit = fit_unit_cube(tape.constant(m.vertex_array())).value();
  EXPECT_EQ(fit.values(), fit_unit_cube(m).vertex_array().values());
  ad::Array w(fit.shape());
  std::mt19937_64 rng(5);
  for (double& v : w.data()) v = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
  auto fn = [&](ad::Tape& t, ad::Var x) { return ad::sum(fit_unit_cube(x) * t.constant(w)); };
  EXPECT_TRUE(ad::grad_check(fn, m.vertex_array()).passed(1e-4));
}

TEST(Laplacian, FlatGridInteriorIsZero) {
  const int n = 7;
  const ad::Array lv = apply_laplacian(flat_grid(n));
  for (int i = 1; i + 1 < n; ++i) {
    for (int j = 1; j + 1 < n; ++j) {
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(lv[3 * (i * n + j) + c], 0.0, 1e-15);
    }
  }
}

TEST(Laplacian, AnnihilatesConstantsExactly) {
  for (const TriangleMesh& base : {make_icosphere(2), flat_grid(5), box(1, 2, 3)}) {
    TriangleMesh m = base;
    for (Vec3& v : m.vertices) v = Vec3(0.37, -1.25, 4.5);
    const ad::Array lv = apply_laplacian(m);
    for (double x : lv.values()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Laplacian, IcosahedronMatchesNeighborAverage) {
  const TriangleMesh m = make_icosphere(0);
  const ad::Array lv = apply_laplacian(m);
  const double edge = (m.vertices[m.faces[0][0]] - m.vertices[m.faces[0][1]]).norm();
  for (std::size_t i = 0; i < m.num_vertices(); ++i) {
    Vec3 mean = Vec3::Zero();
    int count = 0;
    for (std::size_t j = 0; j < m.num_vertices(); ++j) {
      if (j != i && std::abs((m.vertices[j] - m.vertices[i]).norm() - edge) < 1e-9) {
        mean += m.vertices[j];
        ++count;
      }
    }
    ASSERT_EQ(count, 5);
    const Vec3 expected = m.vertices[i] - mean / count;
    const Vec3 got(lv[3 * i], lv[3 * i + 1], lv[3 * i + 2]);
    EXPECT_LT((got - expected).norm(), 1e-12);
    // Radial with magnitude 1 - cos(angle between adjacent vertices) = 1 - 1/sqrt(5).
    EXPECT_NEAR(got.norm(), 1.0 - 1.0 / std::sqrt(5.0), 1e-12);
    EXPECT_NEAR(got.normalized().dot(m.vertices[i]), 1.0, 1e-12);
  }
}

TEST(Laplacian, RejectsIsolatedVertex) {
  TriangleMesh m = box(1, 1, 1);
  m.vertices.emplace_back(5, 5, 5);
  EXPECT_THROW(graph_laplacian(m), Error);
}

TEST(Smoothness, FlatGridInteriorIsNearlyZero) {
  const TriangleMesh grid = flat_grid(6);
  SmoothnessLoss loss(grid);
  ad::Tape tape;
  SmoothnessTerms t = loss.terms(tape.constant(grid.vertex_array()), all_terms());
  for (double a : t.angles.value().values()) EXPECT_LT(a, 1e-3);
  // Each clamped angle is at most acos(1 - 1e-7), about 4.5e-4.
  EXPECT_LT(t.angle_sq.item(), 2.1e-7 * loss.interior_edges());
}

TEST(Smoothness, CoplanarPairHasZeroAngle) {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  SmoothnessLoss loss(m);
  ASSERT_EQ(loss.interior_edges(), 1u);
  ad::Tape tape;
  // The clamp bounds the smallest reported angle by acos(1 - 1e-7).
  EXPECT_LT(loss.terms(tape.constant(m.vertex_array()), all_terms()).angles.value()[0], 5e-4);
}

TEST(Smoothness, CubeRightAnglesMatchEdgeOracle) {
  const TriangleMesh cube = box(1, 1, 1);
  SmoothnessLoss loss(cube);
  ad::Tape tape;
  SmoothnessTerms t = loss.terms(tape.constant(cube.vertex_array()), all_terms());
  const std::vector<double> oracle = edge_angles_oracle(cube);
  ASSERT_EQ(oracle.size(), loss.interior_edges());
  double oracle_sq = 0.0;
  int right_angles = 0;
  for (double a : oracle) {
    oracle_sq += a * a;
    right_angles += std::abs(a - std::numbers::pi / 2) < 1e-12;
  }
  EXPECT_EQ(right_angles, 12);
  EXPECT_NEAR(oracle_sq, 12 * std::pow(std::numbers::pi / 2, 2), 1e-12);
  EXPECT_NEAR(t.angle_sq.item(), oracle_sq, 1e-5);
}

TEST(Smoothness, NonNegativeAndHugeTolerancesDisableHinges) {
  const TriangleMesh m = randomly_offset(make_icosphere(1), 9, 0.1);
  SmoothnessLoss loss(m);
  SmoothnessConfig cfg = all_terms();
  EXPECT_GE(loss.value(m, cfg), 0.0);
  cfg.laplacian_tolerance = 1e6;
  cfg.angle_tolerance = 1e6;
  ad::Tape tape;
  SmoothnessTerms t = loss.terms(tape.constant(m.vertex_array()), cfg);
  EXPECT_EQ(t.laplacian_hinge.item(), 0.0);
  EXPECT_EQ(t.angle_hinge.item(), 0.0);
}

TEST(Smoothness, DegenerateFaceIsCountedNotFatal) {
  TriangleMesh m = make_icosphere(0);
  const Face f = m.faces[0];
  m.vertices[f[1]] = m.vertices[f[0]];
  m.vertices[f[2]] = m.vertices[f[0]];
  SmoothnessLoss loss(make_icosphere(0));
  ad::Tape tape;
  SmoothnessTerms t = loss.terms(tape.constant(m.vertex_array()), all_terms());
  EXPECT_GE(t.degenerate_faces, 1u);
  EXPECT_TRUE(std::isfinite(t.total.item()));
}

TEST(Smoothness, RejectsInvalidConfig) {
  SmoothnessConfig cfg;
  cfg.lambda_angle_sq = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Smoothness, GradientMatchesFiniteDifferences) {
  const TriangleMesh ico = make_icosphere(0);
  SmoothnessLoss loss(ico);
  const SmoothnessConfig cfg = all_terms();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TriangleMesh m = randomly_offset(ico, seed, 0.15);
    auto fn = [&](ad::Tape&, ad::Var x) { return loss.terms(x, cfg).total; };
    const ad::GradCheckReport r = ad::grad_check(fn, m.vertex_array());
    EXPECT_TRUE(r.passed(1e-4)) << "seed " << seed << " error " << r.max_relative_error;
  }
}

TEST(Smoothness, RotationInvariant) {
  const TriangleMesh m = randomly_offset(make_icosphere(2), 4, 0.05);
  SmoothnessLoss loss(m);
  const Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()) * Eigen::AngleAxisd(-1.1, Vec3::UnitY())).toRotationMatrix();
  TriangleMesh rotated = m;
  for (Vec3& v : rotated.vertices) v = rot * v;
  const double a = loss.value(m, all_terms());
  const double b = loss.value(rotated, all_terms());
  EXPECT_LT(std::abs(a - b) / a, 1e-9);
}

TEST(Symmetry, ZeroParametersGiveZeroOffsets) {
  MirrorSymmetry sym(make_icosphere(2));
  const ad::Array off = sym.symmetrize(ad::Array({sym.num_free(), 3}));
  for (double v : off.values()) EXPECT_EQ(v, 0.0);
}

TEST(Symmetry, SingleParameterIsReflected) {
  const TriangleMesh m = make_icosphere(1);
  MirrorSymmetry sym(m);
  std::size_t row = 0;
  while (m.vertices[sym.representatives()[row]][0] <= 0.0) ++row;
  const std::size_t v = sym.representatives()[row];
  const std::size_t w = sym.mirror_of(v);
  ASSERT_NE(v, w);
  ad::Array free({sym.num_free(), 3});
  free[3 * row] = 0.3;
  free[3 * row + 1] = -0.2;
  free[3 * row + 2] = 0.1;
  const ad::Array off = sym.symmetrize(free);
  EXPECT_EQ(off[3 * v], 0.3);
  EXPECT_EQ(off[3 * w], -0.3);
  EXPECT_EQ(off[3 * w + 1], -0.2);
  EXPECT_EQ(off[3 * w + 2], 0.1);
  double others = 0.0;
  for (std::size_t i = 0; i < m.num_vertices(); ++i) {
    if (i != v && i != w) others += std::abs(off[3 * i]) + std::abs(off[3 * i + 1]) + std::abs(off[3 * i + 2]);
  }
  EXPECT_EQ(others, 0.0);
}

TEST(Symmetry, DeformedMeshIsMirrorInvariant) {
  for (int level = 0; level <= 3; ++level) {
    const TriangleMesh base = make_icosphere(level);
    MirrorSymmetry sym(base);
    std::mt19937_64 rng(level + 100);
    ad::Array free({sym.num_free(), 3});
    for (double& x : free.data()) x = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    const ad::Array off = sym.symmetrize(free);
    TriangleMesh deformed = base;
    for (std::size_t i = 0; i < base.num_vertices(); ++i) deformed.vertices[i] += Vec3(off[3 * i], off[3 * i + 1], off[3 * i + 2]);
    for (const Vec3& v : deformed.vertices) {
      const Vec3 mirrored(-v[0], v[1], v[2]);
      double best = 1e9;
      for (const Vec3& u : deformed.vertices) best = std::min(best, (u - mirrored).norm());
      EXPECT_LT(best, 1e-6);
    }
  }
}

TEST(Symmetry, GradientReachesSharedParameterFromBothSides) {
  const TriangleMesh m = make_icosphere(1);
  MirrorSymmetry sym(m);
  ad::Tape tape;
  ad::Var free = tape.variable(ad::Array({sym.num_free(), 3}));
  ad::Var x = ad::slice(sym.symmetrize(free), 1, 0, 1);
  tape.backward(ad::sum(x));
  // +1 from the representative and -1 from its mirror cancel; on-plane rows get 0.
  for (std::size_t r = 0; r < sym.num_free(); ++r) EXPECT_EQ(free.grad()[3 * r], 0.0);
  tape.backward(ad::sum(ad::slice(sym.symmetrize(free), 1, 1, 2)));
  for (std::size_t r = 0; r < sym.num_free(); ++r) {
    const bool pair = sym.mirror_of(sym.representatives()[r]) != sym.representatives()[r];
    EXPECT_EQ(free.grad()[3 * r + 1], pair ? 2.0 : 1.0);
  }
}

TEST(Symmetry, RejectsMeshWithoutMirror) {
  TriangleMesh m = make_icosphere(1);
  m.vertices[5] += Vec3(0.01, 0.0, 0.0);
  if (std::abs(m.vertices[5][0]) < 0.02) m.vertices[5] += Vec3(0.0, 0.01, 0.0);
  try {
    MirrorSymmetry sym(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_NOT_MIRROR_CLOSED");
  }
}

TEST(Obj, IcosahedronRoundTrip) {
  const TriangleMesh m = randomly_offset(make_icosphere(0), 1, 0.1);
  std::stringstream ss;
  write_obj(ss, m);
  const TriangleMesh r = read_obj(ss);
  EXPECT_EQ(r.faces, m.faces);
  ASSERT_EQ(r.num_vertices(), m.num_vertices());
  for (std::size_t i = 0; i < m.num_vertices(); ++i) EXPECT_EQ(r.vertices[i], m.vertices[i]);
}

TEST(Obj, TextureCoordinatesPreserved) {
  TriangleMesh m = box(1, 2, 3);
  for (std::size_t i = 0; i < m.num_faces(); ++i) {
    m.uvs.emplace_back(0.1 * i, 0.05 * i + 0.01);
    m.face_uvs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i)});
  }
  std::stringstream ss;
  write_obj(ss, m);
  const TriangleMesh r = read_obj(ss);
  ASSERT_EQ(r.uvs.size(), m.uvs.size());
  for (std::size_t i = 0; i < m.uvs.size(); ++i) EXPECT_EQ(r.uvs[i], m.uvs[i]);
  EXPECT_EQ(r.face_uvs, m.face_uvs);
}

TEST(Obj, FileRoundTrip) {
  const TriangleMesh m = make_icosphere(1);
  const std::string path = ::testing::TempDir() + "/ico.obj";
  export_obj(m, path);
  const TriangleMesh r = import_obj(path);
  EXPECT_EQ(r.faces, m.faces);
  EXPECT_EQ(r.vertices, m.vertices);
}

TEST(Obj, EmptyFileIsParseError) {
  std::stringstream ss;
  try {
    read_obj(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_PARSE");
  }
}

TEST(Obj, ErrorsCarryLineNumbers) {
  std::stringstream ss("v 0 0 0\nv 1 0 0\n# comment\nv 0 1\nf 1 2 3\n");
  try {
    read_obj(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_PARSE");
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  std::stringstream bad_index("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n");
  try {
    read_obj(bad_index);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(Obj, QuadsAreFanTriangulatedAndNegativeIndicesResolve) {
  std::stringstream ss("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n");
  const TriangleMesh r = read_obj(ss);
  ASSERT_EQ(r.num_faces(), 2u);
  EXPECT_EQ(r.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(r.faces[1], (Face{0, 2, 3}));
}

TEST(MeshMetrics, AreasOfUnitBox) {
  EXPECT_NEAR(surface_area(box(1, 1, 1)), 6.0, 1e-12);
  EXPECT_NEAR(face_area_cv(box(1, 1, 1)), 0.0, 1e-12);
  EXPECT_GT(face_area_cv(box(1, 2, 3)), 0.1);
}
