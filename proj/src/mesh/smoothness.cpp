#include "ss3d/mesh/smoothness.hpp"

#include <cmath>

#include "ss3d/common/error.hpp"

namespace ss3d {

void SmoothnessConfig::validate() const {
  for (double v : {laplacian_tolerance, angle_tolerance, lambda_laplacian_hinge, lambda_laplacian_sq,
                   lambda_angle_hinge, lambda_angle_sq}) {
    require(std::isfinite(v) && v >= 0.0, "E_CONFIG", "smoothness settings must be finite and non-negative");
  }
}

SmoothnessLoss::SmoothnessLoss(const TriangleMesh& connectivity)
    : num_vertices_(connectivity.num_vertices()),
      laplacian_(graph_laplacian(connectivity)),
      corners_(face_corners(connectivity.faces)) {
  const MeshTopology topo = MeshTopology::build(connectivity);
  for (const MeshEdge& e : topo.edges) {
    if (e.interior()) {
      edge_face0_.push_back(static_cast<std::size_t>(e.face0));
      edge_face1_.push_back(static_cast<std::size_t>(e.face1));
    }
  }
}

SmoothnessTerms SmoothnessLoss::terms(ad::Var vertices, const SmoothnessConfig& cfg) const {
  cfg.validate();
  require(vertices.shape() == ad::Shape{num_vertices_, 3}, "E_SHAPE", "vertex array does not match connectivity");
  ad::Tape& tape = *vertices.tape();
  SmoothnessTerms out;

  ad::Var lv = laplacian_apply(laplacian_, vertices);
  out.laplacian_sq = ad::sum(ad::square(lv));
  out.laplacian_hinge = ad::square(ad::max_with(ad::sum(ad::row_norms(lv)) - cfg.laplacian_tolerance, 0.0));

  ad::Var crosses = face_cross_products(vertices, corners_);
  for (std::size_t f = 0; f < crosses.shape()[0]; ++f) {
    const auto& c = crosses.value();
    if (c[3 * f] * c[3 * f] + c[3 * f + 1] * c[3 * f + 1] + c[3 * f + 2] * c[3 * f + 2] < 1e-30) {
      ++out.degenerate_faces;
    }
  }
  ad::Var normals = ad::normalize_rows(crosses);
  if (edge_face0_.empty()) {
    out.angles = tape.constant(ad::Array({0}));
    out.angle_sq = tape.constant(0.0);
    out.angle_hinge = tape.constant(0.0);
  } else {
    ad::Var n0 = ad::gather(normals, edge_face0_);
    ad::Var n1 = ad::gather(normals, edge_face1_);
    ad::Var cosine = ad::clamp(ad::sum_axis(n0 * n1, 1), -1.0 + 1e-7, 1.0 - 1e-7);
    out.angles = ad::acos(cosine);
    out.angle_sq = ad::sum(ad::square(out.angles));
    out.angle_hinge = ad::square(ad::max_with(ad::abs(ad::sum(out.angles)) - cfg.angle_tolerance, 0.0));
  }
  out.total = out.laplacian_hinge * cfg.lambda_laplacian_hinge + out.laplacian_sq * cfg.lambda_laplacian_sq +
              out.angle_hinge * cfg.lambda_angle_hinge + out.angle_sq * cfg.lambda_angle_sq;
  return out;
}

double SmoothnessLoss::value(const TriangleMesh& mesh, const SmoothnessConfig& cfg) const {
  ad::Tape tape;
  return terms(tape.constant(mesh.vertex_array()), cfg).total.item();
}

}  // namespace ss3d
