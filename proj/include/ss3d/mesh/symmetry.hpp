#pragma once

#include <cstddef>
#include <vector>

#include "ss3d/mesh/triangle_mesh.hpp"

namespace ss3d {

/// Mirror-symmetric offset parameterization about the plane `axis` = 0.
/// Each mirror pair shares one free 3-vector; the partner receives its
/// reflection. Vertices on the plane get a zero offset along the axis.
class MirrorSymmetry {
 public:
  /// Throws E_NOT_MIRROR_CLOSED if some vertex has no mirror partner within tolerance.
  MirrorSymmetry(const TriangleMesh& base, int axis = 0, double tolerance = 1e-6);

  std::size_t num_free() const { return representatives_.size(); }
  std::size_t num_vertices() const { return owner_.size(); }
  int axis() const { return axis_; }

  /// Mirror partner of a vertex (itself for on-plane vertices).
  std::size_t mirror_of(std::size_t vertex) const { return mirror_[vertex]; }
  /// Vertex index owning each free parameter row.
  const std::vector<std::size_t>& representatives() const { return representatives_; }

  /// (num_free x 3) free parameters to (N x 3) symmetric offsets.
  ad::Var symmetrize(ad::Var free) const;
  ad::Array symmetrize(const ad::Array& free) const;

  /// Orthogonal projection of arbitrary (N x 3) offsets onto symmetric ones:
  /// each vertex gets the average of its offset and its partner's reflection.
  ad::Var project(ad::Var offsets) const;

 private:
  int axis_;
  std::vector<std::size_t> mirror_;
  std::vector<std::size_t> representatives_;
  std::vector<std::size_t> owner_;  // free row used by each vertex
  ad::Array signs_;                 // (N x 3) reflection mask
  ad::Array reflect_;               // (1 x 3), -1 on the mirror axis
};

}  // namespace ss3d
