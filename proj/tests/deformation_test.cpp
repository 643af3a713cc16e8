#include <gtest/gtest.h>

#include <cmath>

#include "ss3d/autodiff/grad_check.hpp"
#include "ss3d/common/error.hpp"
#include "ss3d/deform/deformation.hpp"

using namespace ss3d;

namespace {

ad::Array random_array(const ad::Shape& shape, Rng& rng, double scale) {
  ad::Array a(shape);
  for (double& v : a.data()) v = uniform(rng, -scale, scale);
  return a;
}

Vec3 extent_of(const TriangleMesh& m) {
  Vec3 lo = m.vertices[0];
  Vec3 hi = m.vertices[0];
  for (const Vec3& v : m.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return hi - lo;
}

double max_vertex_error(const TriangleMesh& a, const TriangleMesh& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.num_vertices(); ++i) e = std::max(e, (a.vertices[i] - b.vertices[i]).norm());
  return e;
}

ad::ScalarFunction weighted_sum(std::function<ad::Var(ad::Var)> f, std::uint64_t seed) {
  return [f, seed](ad::Tape& tape, ad::Var x) {
    ad::Var y = f(x);
    Rng rng = make_rng(seed, {17});
    ad::Array w(y.shape());
    for (double& v : w.data()) v = uniform(rng, 0.5, 1.5);
    return ad::sum(y * tape.constant(w));
  };
}

}  // namespace

TEST(CategoryDims, TableValues) {
  const CategoryDims car = category_dims("car");
  EXPECT_EQ(car.width, 0.5);
  EXPECT_EQ(car.height, 0.5);
  EXPECT_EQ(car.depth, 1.0);
  const CategoryDims plane = category_dims("aeroplane");
  EXPECT_EQ(plane.width, 1.0);
  EXPECT_EQ(plane.height, 0.5);
  EXPECT_EQ(plane.depth, 1.0);
  for (const char* c : {"horse", "chair"}) {
    const CategoryDims d = category_dims(c);
    EXPECT_EQ(d.width + d.height + d.depth, 3.0);
  }
  EXPECT_THROW(category_dims("boat"), Error);
  EXPECT_THROW((CategoryDims{1.5, 1.0, 1.0}.validate()), Error);
}

TEST(Stage1Deform, ZeroOffsetsGiveUnitFitSphere) {
  const TriangleMesh sphere = make_icosphere(2);
  const TriangleMesh out = stage1_deform(sphere, ad::Array({sphere.num_vertices(), 3}), {1, 1, 1});
  EXPECT_LT(max_vertex_error(out, fit_unit_cube(sphere)), 1e-12);
}

TEST(Stage1Deform, CarDimsGiveEllipsoidRatios) {
  const TriangleMesh sphere = make_icosphere(2);
  const TriangleMesh out = stage1_deform(sphere, ad::Array({sphere.num_vertices(), 3}), category_dims("car"));
  const Vec3 e = extent_of(out);
  EXPECT_NEAR(e[2], 1.0, 1e-12);
  EXPECT_NEAR(e[0] / e[2], 0.5, 1e-12);
  EXPECT_NEAR(e[1] / e[2], 0.5, 1e-12);
}

TEST(Stage1Deform, UniformOffsetIsCancelledByRefit) {
  const TriangleMesh sphere = make_icosphere(1);
  ad::Array shift({sphere.num_vertices(), 3});
  for (std::size_t i = 0; i < sphere.num_vertices(); ++i) {
    shift[3 * i + 1] = 0.3;
    shift[3 * i + 2] = -0.7;
  }
  const CategoryDims dims = category_dims("car");
  const TriangleMesh a = stage1_deform(sphere, shift, dims);
  const TriangleMesh b = stage1_deform(sphere, ad::Array({sphere.num_vertices(), 3}), dims);
  EXPECT_LT(max_vertex_error(a, b), 1e-12);
}

TEST(Stage1Deform, RejectsShapeMismatch) {
  try {
    stage1_deform(make_icosphere(1), ad::Array({5, 3}), {1, 1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_SHAPE");
  }
}

TEST(Stage1Deform, OutputIsMirrorSymmetricForAnyParameters) {
  const Stage1Shape shape(make_icosphere(2), category_dims("car"));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed);
    const TriangleMesh m = shape.mesh(random_array({shape.num_free(), 3}, rng, 0.2));
    for (std::size_t i = 0; i < m.num_vertices(); ++i) {
      const Vec3 partner = m.vertices[shape.symmetry().mirror_of(i)];
      EXPECT_LT((Vec3(-partner[0], partner[1], partner[2]) - m.vertices[i]).norm(), 1e-6);
    }
  }
}

TEST(Stage1Deform, GradientMatchesFiniteDifferences) {
  const TriangleMesh sphere = make_icosphere(1);
  const Stage1Shape shape(sphere, category_dims("car"));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, {1});
    const ad::Array offsets = random_array({sphere.num_vertices(), 3}, rng, 0.05);
    auto fn = weighted_sum([&](ad::Var x) { return shape.deform(x); }, seed);
    const ad::GradCheckReport r = ad::grad_check(fn, offsets);
    EXPECT_TRUE(r.passed(1e-4)) << seed << " " << r.max_relative_error;
    const ad::Array free = random_array({shape.num_free(), 3}, rng, 0.05);
    auto fn_free = weighted_sum([&](ad::Var x) { return shape.deform_free(x); }, seed);
    EXPECT_TRUE(ad::grad_check(fn_free, free).passed(1e-4)) << seed;
  }
}

TEST(Bernstein, PartitionOfUnity) {
  double worst = 0.0;
  for (int s = 0; s <= 1000; ++s) {
    const double t = s / 1000.0;
    const auto b = bernstein3(t);
    worst = std::max(worst, std::abs(b[0] + b[1] + b[2] + b[3] - 1.0));
  }
  EXPECT_LT(worst, 1e-12);
  const FFDLattice lattice(make_icosphere(3));
  const ad::Array& w = lattice.weights();
  for (std::size_t v = 0; v < w.shape()[0]; ++v) {
    double s = 0.0;
    for (std::size_t c = 0; c < FFDGrid::kPoints; ++c) s += w[v * FFDGrid::kPoints + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(FFD, ZeroDisplacementIsIdentity) {
  const TriangleMesh base = fit_unit_cube(make_icosphere(2));
  EXPECT_LT(max_vertex_error(ffd_deform(base, FFDGrid{}), base), 1e-9);
}

TEST(FFD, ConstantDisplacementTranslates) {
  const TriangleMesh base = make_icosphere(1);
  const FFDLattice lattice(base, Vec3(-1.5, -1.5, -1.5), Vec3(1.5, 1.5, 1.5));
  ad::Tape tape;
  ad::Array d({64, 3});
  for (std::size_t c = 0; c < 64; ++c) {
    d[3 * c] = 0.1;
    d[3 * c + 1] = -0.2;
    d[3 * c + 2] = 0.05;
  }
  const ad::Array moved = lattice.displace(tape.constant(d)).value();
  const Vec3 t = Vec3(0.1, -0.2, 0.05) * 3.0;  // lattice units times box side
  for (std::size_t i = 0; i < base.num_vertices(); ++i) {
    const Vec3 p(moved[3 * i], moved[3 * i + 1], moved[3 * i + 2]);
    EXPECT_LT((p - base.vertices[i] - t).norm(), 1e-12);
  }
}

TEST(FFD, SingleControlPointMatchesBasisOracle) {
  TriangleMesh cloud;
  Rng rng = make_rng(42);
  for (int i = 0; i < 50; ++i) cloud.vertices.emplace_back(uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1));
  const FFDLattice lattice(cloud, Vec3::Zero(), Vec3::Ones());
  const std::size_t ci = 1, cj = 3, ck = 2;
  const Vec3 d(0.3, -0.1, 0.25);
  ad::Array disp({4, 4, 4, 3});
  for (int a = 0; a < 3; ++a) disp[3 * (16 * ci + 4 * cj + ck) + a] = d[a];
  ad::Tape tape;
  const ad::Array moved = lattice.displace(tape.constant(disp)).value();
  for (std::size_t v = 0; v < cloud.num_vertices(); ++v) {
    const Vec3& p = cloud.vertices[v];
    const double b = bernstein3(p[0])[ci] * bernstein3(p[1])[cj] * bernstein3(p[2])[ck];
    const Vec3 got = Vec3(moved[3 * v], moved[3 * v + 1], moved[3 * v + 2]) - p;
    EXPECT_LT((got - b * d).norm(), 1e-10);
  }
}

TEST(FFD, AspectScalesAxesBeforeRefit) {
  const TriangleMesh base = fit_unit_cube(make_icosphere(2));
  FFDGrid grid;
  grid.log_aspect[1] = std::log(0.5);
  const Vec3 e = extent_of(ffd_deform(base, grid));
  EXPECT_NEAR(e[0], 1.0, 1e-12);
  EXPECT_NEAR(e[1], 0.5, 1e-12);
  EXPECT_NEAR(grid.aspect()[1], 0.5, 1e-15);
}

TEST(FFD, RejectsVertexOutsideLattice) {
  TriangleMesh m = make_icosphere(0);
  try {
    FFDLattice(m, Vec3::Zero(), Vec3::Ones());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_DOMAIN");
  }
}

TEST(FFD, GradientMatchesFiniteDifferences) {
  const FFDLattice lattice(fit_unit_cube(make_icosphere(1)));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, {2});
    ad::Array point({64 * 3 + 3});
    for (double& v : point.data()) v = uniform(rng, -0.1, 0.1);
    auto fn = weighted_sum(
        [&](ad::Var x) {
          return lattice.deform(ad::slice(x, 0, 0, 192), ad::slice(x, 0, 192, 195));
        },
        seed);
    const ad::GradCheckReport r = ad::grad_check(fn, point);
    EXPECT_TRUE(r.passed(1e-4)) << seed << " " << r.max_relative_error;
  }
}

TEST(ShapeSampling, ZeroSigmaAndDeterminism) {
  Rng rng = make_rng(1);
  const FFDGrid g = random_shape(rng);
  Rng r0 = make_rng(9);
  EXPECT_EQ(perturb_shape(g, 0.0, r0).displacements.values(), g.displacements.values());
  Rng a = make_rng(5);
  Rng b = make_rng(5);
  EXPECT_EQ(perturb_shape(g, 0.02, a).displacements.values(), perturb_shape(g, 0.02, b).displacements.values());
  Rng c = make_rng(6);
  Rng d = make_rng(6);
  EXPECT_EQ(random_shape(c).displacements.values(), random_shape(d).displacements.values());
  Rng e = make_rng(1);
  EXPECT_THROW(perturb_shape(g, -1.0, e), Error);
}

TEST(ShapeSampling, PerturbationMeanMatchesOriginal) {
  Rng rng = make_rng(3);
  const FFDGrid g = random_shape(rng);
  const double sigma = 0.05;
  const int draws = 10000;
  ad::Array mean(g.displacements.shape());
  for (int s = 0; s < draws; ++s) {
    const FFDGrid p = perturb_shape(g, sigma, rng);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p.displacements[i] / draws;
  }
  // 3 sigma / sqrt(draws) per component; a handful of the 192 components may exceed a 3-sigma band by chance.
  int outside = 0;
  double grid_mean = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    outside += std::abs(mean[i] - g.displacements[i]) > 3 * sigma / 100;
    grid_mean += (mean[i] - g.displacements[i]) / static_cast<double>(mean.size());
  }
  EXPECT_LE(outside, 3);
  EXPECT_LT(std::abs(grid_mean), 3 * sigma / 100 / std::sqrt(static_cast<double>(mean.size())));
}
