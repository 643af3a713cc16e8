#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "ss3d/common/random.hpp"
#include "ss3d/mesh/symmetry.hpp"
#include "ss3d/mesh/triangle_mesh.hpp"

namespace ss3d {

/// Initial relative extent of the base sphere along x (width), y (height)
/// and z (depth).
struct CategoryDims {
  double width = 1.0;
  double height = 1.0;
  double depth = 1.0;

  /// Throws E_CONFIG unless every extent is in (0, 1].
  void validate() const;
};

/// Built-in table: car, horse, aeroplane, chair. Throws E_CONFIG otherwise.
CategoryDims category_dims(const std::string& category);

/// Stage-1 shape: the category-scaled sphere plus mirror-symmetric offsets,
/// refit to the unit cube.
class Stage1Shape {
 public:
  Stage1Shape(const TriangleMesh& sphere, const CategoryDims& dims, int mirror_axis = 0);

  const TriangleMesh& base() const { return scaled_; }
  const MirrorSymmetry& symmetry() const { return symmetry_; }
  std::size_t num_free() const { return symmetry_.num_free(); }

  /// (num_free x 3) shared offsets to (N x 3) vertex positions.
  ad::Var deform_free(ad::Var free) const;
  /// (N x 3) offsets, projected onto the symmetric subspace first.
  ad::Var deform(ad::Var offsets) const;
  TriangleMesh mesh(const ad::Array& free) const;

 private:
  TriangleMesh scaled_;
  MirrorSymmetry symmetry_;
  ad::Array scaled_vertices_;
};

/// (base * dims) + symmetrized offsets, then fit_unit_cube.
TriangleMesh stage1_deform(const TriangleMesh& base, const ad::Array& offsets, const CategoryDims& dims);

/// Control-lattice displacements (4 x 4 x 4 x 3, in lattice units where the
/// lattice box has side 1) and unconstrained log-aspect factors (x, y, z).
struct FFDGrid {
  static constexpr std::size_t kSide = 4;
  static constexpr std::size_t kPoints = kSide * kSide * kSide;

  ad::Array displacements = ad::Array({kSide, kSide, kSide, 3});
  ad::Array log_aspect = ad::Array({3});

  std::array<double, 3> aspect() const;
  /// Throws E_CONFIG on non-finite entries or wrong shapes.
  void validate() const;
};

/// Degree-3 Bernstein basis B_i(t), i = 0..3.
std::array<double, 4> bernstein3(double t);

/// Free-form deformation over a fixed lattice box. The lattice weights of the
/// embedded vertices are precomputed, so deformation is one matrix product.
class FFDLattice {
 public:
  /// Lattice box equal to the bounding box of `mesh` grown by `margin` * extent per side.
  explicit FFDLattice(const TriangleMesh& mesh, double margin = 0.05);
  FFDLattice(const TriangleMesh& mesh, const Vec3& box_min, const Vec3& box_max);

  const Vec3& box_min() const { return box_min_; }
  const Vec3& box_max() const { return box_max_; }
  /// (N x 64) Bernstein weights; control point (i, j, k) is column 16 i + 4 j + k.
  const ad::Array& weights() const { return weights_; }
  const TriangleMesh& mesh() const { return mesh_; }

  /// Lattice-normalized coordinate of p in [0, 1]^3; throws E_DOMAIN outside.
  Vec3 normalize(const Vec3& p) const;

  /// Deformed vertices before aspect scaling and refit.
  ad::Var displace(ad::Var displacements) const;
  /// Full deformation: displace, scale by exp(log_aspect), fit_unit_cube. Displacements
  /// may be (4 x 4 x 4 x 3) or (64 x 3).
  ad::Var deform(ad::Var displacements, ad::Var log_aspect) const;
  TriangleMesh deform(const FFDGrid& grid) const;

 private:
  TriangleMesh mesh_;
  Vec3 box_min_;
  Vec3 box_max_;
  ad::Array weights_;
  ad::Array base_vertices_;
  ad::Array extent_;  // (1 x 3)
};

/// One-shot FFD of `mesh` using a lattice fitted around it.
TriangleMesh ffd_deform(const TriangleMesh& mesh, const FFDGrid& grid);

struct ShapePrior {
  double displacement_sigma = 0.1;  // lattice units
  double log_aspect_sigma = 0.1;
};

/// Adds N(0, sigma^2) noise to every displacement; sigma = 0 returns the grid unchanged.
FFDGrid perturb_shape(const FFDGrid& grid, double sigma, Rng& rng);
FFDGrid random_shape(Rng& rng, const ShapePrior& prior = {});

}  // namespace ss3d
