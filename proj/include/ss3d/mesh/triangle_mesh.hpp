#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ss3d/autodiff/ops.hpp"

namespace ss3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Face = std::array<std::uint32_t, 3>;

/// Triangle mesh with counterclockwise (outward) winding. Texture coordinates
/// are optional; when present there is one index triple per face.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec2> uvs;
  std::vector<Face> face_uvs;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_faces() const { return faces.size(); }
  bool has_uvs() const { return !face_uvs.empty(); }

  /// Vertex positions as an (N x 3) array.
  ad::Array vertex_array() const;
  void set_vertices(const ad::Array& positions);

  /// Throws E_MESH on out-of-range indices or faces repeating a vertex.
  void validate() const;
};

struct MeshEdge {
  std::uint32_t v0 = 0;
  std::uint32_t v1 = 0;
  std::int64_t face0 = -1;
  std::int64_t face1 = -1;  // -1 on a boundary edge

  bool interior() const { return face1 >= 0; }
};

/// Edge/face adjacency. Throws E_NONMANIFOLD when an edge has more than two faces.
struct MeshTopology {
  std::vector<MeshEdge> edges;
  std::vector<std::vector<std::uint32_t>> neighbors;  // sorted one-ring per vertex

  static MeshTopology build(const TriangleMesh& mesh);
  bool closed() const;
};

/// Geodesic sphere of unit radius from a 4-way split of the icosahedron.
/// Throws E_ARG for subdivisions > 5.
TriangleMesh make_icosphere(int subdivisions);

/// V - E + F.
long euler_characteristic(const TriangleMesh& mesh);

/// Uniform scale and translation so the bounding box is centered at the
/// origin with its largest side equal to 1. Throws E_DEGENERATE on zero extent.
TriangleMesh fit_unit_cube(const TriangleMesh& mesh);
ad::Var fit_unit_cube(ad::Var vertices);

/// Uniform graph Laplacian: (L v)_i = v_i - mean of the one-ring of i.
/// Throws E_MESH when a vertex has no neighbor.
ad::SparseMatrix graph_laplacian(const TriangleMesh& mesh);

/// L x for a Laplacian with zero row sums, evaluated as sum_j L_ij (x_j - x_i)
/// so constant columns map to exactly zero.
ad::Var laplacian_apply(const ad::SparseMatrix& laplacian, ad::Var x);

std::vector<double> face_areas(const TriangleMesh& mesh);
double surface_area(const TriangleMesh& mesh);
/// Standard deviation over mean of face areas.
double face_area_cv(const TriangleMesh& mesh);

/// Flat index arrays per face corner, convenient for gather.
struct FaceCorners {
  std::vector<std::size_t> c0;
  std::vector<std::size_t> c1;
  std::vector<std::size_t> c2;
};
FaceCorners face_corners(const std::vector<Face>& faces);

/// (F x 3) per-face normal directions scaled by twice the face area.
ad::Var face_cross_products(ad::Var vertices, const FaceCorners& corners);

}  // namespace ss3d
