#pragma once

#include <cstddef>

#include "ss3d/mesh/triangle_mesh.hpp"

namespace ss3d {

/// Weights and tolerances of the smoothness regularizer. Tolerances apply to
/// the summed Laplacian norm (laplacian_tolerance) and the summed dihedral
/// angle in radians (angle_tolerance).
struct SmoothnessConfig {
  double laplacian_tolerance = 0.0;
  double angle_tolerance = 0.0;
  double lambda_laplacian_hinge = 0.0;  // weight of max(sum_i |L_i v| - t_l, 0)^2
  double lambda_laplacian_sq = 0.0;     // weight of sum_i |L_i v|^2
  double lambda_angle_hinge = 0.0;      // weight of max(|sum theta| - t_a, 0)^2
  double lambda_angle_sq = 0.0;         // weight of sum theta^2

  void validate() const;
};

struct SmoothnessTerms {
  ad::Var total;
  ad::Var laplacian_hinge;
  ad::Var laplacian_sq;
  ad::Var angle_hinge;
  ad::Var angle_sq;
  ad::Var angles;  // one dihedral angle per interior edge
  std::size_t degenerate_faces = 0;
};

/// Smoothness regularizer bound to a fixed connectivity. The Laplacian and
/// adjacency are built once; terms() evaluates on any vertex positions.
class SmoothnessLoss {
 public:
  explicit SmoothnessLoss(const TriangleMesh& connectivity);

  SmoothnessTerms terms(ad::Var vertices, const SmoothnessConfig& cfg) const;
  double value(const TriangleMesh& mesh, const SmoothnessConfig& cfg) const;

  const ad::SparseMatrix& laplacian() const { return laplacian_; }
  std::size_t interior_edges() const { return edge_face0_.size(); }

 private:
  std::size_t num_vertices_;
  ad::SparseMatrix laplacian_;
  FaceCorners corners_;
  std::vector<std::size_t> edge_face0_;
  std::vector<std::size_t> edge_face1_;
};

}  // namespace ss3d
