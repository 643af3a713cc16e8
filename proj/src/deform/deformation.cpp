#include "ss3d/deform/deformation.hpp"

#include <cmath>

#include "ss3d/common/error.hpp"

namespace ss3d {

void CategoryDims::validate() const {
  for (double v : {width, height, depth}) {
    require(std::isfinite(v) && v > 0.0 && v <= 1.0, "E_CONFIG", "category dimensions must lie in (0, 1]");
  }
}

CategoryDims category_dims(const std::string& category) {
  if (category == "car") return {0.5, 0.5, 1.0};
  if (category == "horse") return {1.0, 1.0, 1.0};
  if (category == "aeroplane") return {1.0, 0.5, 1.0};
  if (category == "chair") return {1.0, 1.0, 1.0};
  fail("E_CONFIG", "unknown category '" + category + "'");
}

namespace {

TriangleMesh scale_by_dims(TriangleMesh mesh, const CategoryDims& dims) {
  dims.validate();
  for (Vec3& v : mesh.vertices) v = v.cwiseProduct(Vec3(dims.width, dims.height, dims.depth));
  return mesh;
}

}  // namespace

Stage1Shape::Stage1Shape(const TriangleMesh& sphere, const CategoryDims& dims, int mirror_axis)
    : scaled_(scale_by_dims(sphere, dims)),
      symmetry_(scaled_, mirror_axis),
      scaled_vertices_(scaled_.vertex_array()) {}

ad::Var Stage1Shape::deform_free(ad::Var free) const {
  return fit_unit_cube(free.tape()->constant(scaled_vertices_) + symmetry_.symmetrize(free));
}

ad::Var Stage1Shape::deform(ad::Var offsets) const {
  require(offsets.shape() == ad::Shape{scaled_.num_vertices(), 3}, "E_SHAPE", "offsets must be (N x 3)");
  return fit_unit_cube(offsets.tape()->constant(scaled_vertices_) + symmetry_.project(offsets));
}

TriangleMesh Stage1Shape::mesh(const ad::Array& free) const {
  ad::Tape tape;
  TriangleMesh out = scaled_;
  out.set_vertices(deform_free(tape.constant(free)).value());
  return out;
}

TriangleMesh stage1_deform(const TriangleMesh& base, const ad::Array& offsets, const CategoryDims& dims) {
  require(offsets.shape() == ad::Shape{base.num_vertices(), 3}, "E_SHAPE", "offsets must be (N x 3)");
  Stage1Shape shape(base, dims);
  ad::Tape tape;
  TriangleMesh out = shape.base();
  out.set_vertices(shape.deform(tape.constant(offsets)).value());
  return out;
}

std::array<double, 3> FFDGrid::aspect() const {
  return {std::exp(log_aspect[0]), std::exp(log_aspect[1]), std::exp(log_aspect[2])};
}

void FFDGrid::validate() const {
  require(displacements.size() == kPoints * 3 && log_aspect.size() == 3, "E_CONFIG", "malformed FFD grid");
  for (double v : displacements.values()) require(std::isfinite(v), "E_CONFIG", "non-finite FFD displacement");
  for (double v : log_aspect.values()) require(std::isfinite(v), "E_CONFIG", "non-finite FFD aspect");
}

std::array<double, 4> bernstein3(double t) {
  const double s = 1.0 - t;
  return {s * s * s, 3.0 * t * s * s, 3.0 * t * t * s, t * t * t};
}

FFDLattice::FFDLattice(const TriangleMesh& mesh, double margin) : mesh_(mesh) {
  require(!mesh.vertices.empty(), "E_MESH", "FFD needs a non-empty mesh");
  require(margin >= 0.0, "E_ARG", "lattice margin must be non-negative");
  Vec3 lo = mesh.vertices[0];
  Vec3 hi = mesh.vertices[0];
  for (const Vec3& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 grow = (hi - lo).cwiseMax(Vec3::Constant(1e-9)) * margin;
  *this = FFDLattice(mesh, lo - grow - Vec3::Constant(1e-9), hi + grow + Vec3::Constant(1e-9));
}

FFDLattice::FFDLattice(const TriangleMesh& mesh, const Vec3& box_min, const Vec3& box_max)
    : mesh_(mesh), box_min_(box_min), box_max_(box_max), extent_({1, 3}) {
  require(((box_max - box_min).array() > 0.0).all(), "E_ARG", "lattice box must have positive extent");
  for (int a = 0; a < 3; ++a) extent_[static_cast<std::size_t>(a)] = box_max[a] - box_min[a];
  const std::size_t n = mesh.num_vertices();
  weights_ = ad::Array({n, FFDGrid::kPoints});
  for (std::size_t v = 0; v < n; ++v) {
    const Vec3 t = normalize(mesh.vertices[v]);
    const auto bx = bernstein3(t[0]);
    const auto by = bernstein3(t[1]);
    const auto bz = bernstein3(t[2]);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        for (std::size_t k = 0; k < 4; ++k) weights_[v * FFDGrid::kPoints + 16 * i + 4 * j + k] = bx[i] * by[j] * bz[k];
      }
    }
  }
  base_vertices_ = mesh.vertex_array();
}

Vec3 FFDLattice::normalize(const Vec3& p) const {
  const Vec3 t = (p - box_min_).cwiseQuotient(box_max_ - box_min_);
  require((t.array() >= 0.0).all() && (t.array() <= 1.0).all(), "E_DOMAIN", "vertex outside the FFD lattice");
  return t;
}

ad::Var FFDLattice::displace(ad::Var displacements) const {
  require(displacements.size() == FFDGrid::kPoints * 3, "E_SHAPE", "FFD displacements must have 64 x 3 entries");
  ad::Tape& tape = *displacements.tape();
  ad::Var d = ad::reshape(displacements, {FFDGrid::kPoints, 3}) * tape.constant(extent_);
  return tape.constant(base_vertices_) + ad::matmul(tape.constant(weights_), d);
}

ad::Var FFDLattice::deform(ad::Var displacements, ad::Var log_aspect) const {
  require(log_aspect.size() == 3, "E_SHAPE", "log aspect must have 3 entries");
  ad::Var aspect = ad::exp(ad::reshape(log_aspect, {1, 3}));
  return fit_unit_cube(displace(displacements) * aspect);
}

TriangleMesh FFDLattice::deform(const FFDGrid& grid) const {
  grid.validate();
  ad::Tape tape;
  TriangleMesh out = mesh_;
  out.set_vertices(deform(tape.constant(grid.displacements), tape.constant(grid.log_aspect)).value());
  return out;
}

TriangleMesh ffd_deform(const TriangleMesh& mesh, const FFDGrid& grid) { return FFDLattice(mesh).deform(grid); }

FFDGrid perturb_shape(const FFDGrid& grid, double sigma, Rng& rng) {
  require(sigma >= 0.0, "E_ARG", "perturbation sigma must be non-negative");
  FFDGrid out = grid;
  for (double& v : out.displacements.data()) v += gaussian(rng, sigma);
  return out;
}

FFDGrid random_shape(Rng& rng, const ShapePrior& prior) {
  FFDGrid out;
  for (double& v : out.displacements.data()) v = gaussian(rng, prior.displacement_sigma);
  for (double& v : out.log_aspect.data()) v = gaussian(rng, prior.log_aspect_sigma);
  return out;
}

}  // namespace ss3d
