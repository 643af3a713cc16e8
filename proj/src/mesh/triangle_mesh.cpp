#include "ss3d/mesh/triangle_mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ss3d/common/error.hpp"

namespace ss3d {

ad::Array TriangleMesh::vertex_array() const {
  ad::Array out({vertices.size(), 3});
  for (std::size_t i = 0; i < vertices.size(); ++i)
    for (int j = 0; j < 3; ++j) out[3 * i + j] = vertices[i][j];
  return out;
}

void TriangleMesh::set_vertices(const ad::Array& positions) {
  require(positions.size() == 3 * vertices.size(), "E_SHAPE", "vertex array size mismatch");
  for (std::size_t i = 0; i < vertices.size(); ++i)
    vertices[i] = Vec3(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]);
}

void TriangleMesh::validate() const {
  for (const Face& f : faces) {
    for (std::uint32_t v : f) {
      require(v < vertices.size(), "E_MESH", "face index out of range");
    }
    require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], "E_MESH", "face repeats a vertex");
  }
  if (!face_uvs.empty()) {
    require(face_uvs.size() == faces.size(), "E_MESH", "face texture index count mismatch");
    for (const Face& f : face_uvs)
      for (std::uint32_t t : f) require(t < uvs.size(), "E_MESH", "texture index out of range");
  }
}

MeshTopology MeshTopology::build(const TriangleMesh& mesh) {
  mesh.validate();
  MeshTopology topo;
  topo.neighbors.resize(mesh.num_vertices());
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> lookup;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      std::uint32_t a = mesh.faces[f][k];
      std::uint32_t b = mesh.faces[f][(k + 1) % 3];
      topo.neighbors[a].push_back(b);
      topo.neighbors[b].push_back(a);
      const auto key = std::minmax(a, b);
      auto it = lookup.find(key);
      if (it == lookup.end()) {
        lookup.emplace(key, topo.edges.size());
        topo.edges.push_back({key.first, key.second, static_cast<std::int64_t>(f), -1});
      } else {
        MeshEdge& e = topo.edges[it->second];
        require(e.face1 < 0, "E_NONMANIFOLD", "edge shared by more than two faces");
        e.face1 = static_cast<std::int64_t>(f);
      }
    }
  }
  for (auto& n : topo.neighbors) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return topo;
}

bool MeshTopology::closed() const {
  return std::all_of(edges.begin(), edges.end(), [](const MeshEdge& e) { return e.interior(); });
}

TriangleMesh make_icosphere(int subdivisions) {
  require(subdivisions >= 0 && subdivisions <= 5, "E_ARG", "icosphere subdivisions must be in [0, 5]");
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh mesh;
  mesh.vertices = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                   {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (Vec3& v : mesh.vertices) v.normalize();
  mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
      mesh.vertices.push_back(((mesh.vertices[a] + mesh.vertices[b]) * 0.5).normalized());
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(mesh.faces.size() * 4);
    for (const Face& f : mesh.faces) {
      const std::uint32_t a = mid(f[0], f[1]);
      const std::uint32_t b = mid(f[1], f[2]);
      const std::uint32_t c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    mesh.faces = std::move(next);
  }
  return mesh;
}

long euler_characteristic(const TriangleMesh& mesh) {
  const MeshTopology topo = MeshTopology::build(mesh);
  return static_cast<long>(mesh.num_vertices()) - static_cast<long>(topo.edges.size()) +
         static_cast<long>(mesh.num_faces());
}

TriangleMesh fit_unit_cube(const TriangleMesh& mesh) {
  require(!mesh.vertices.empty(), "E_DEGENERATE", "cannot fit an empty mesh");
  Vec3 lo = mesh.vertices[0];
  Vec3 hi = mesh.vertices[0];
  for (const Vec3& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double extent = (hi - lo).maxCoeff();
  require(extent > 0.0, "E_DEGENERATE", "mesh has zero extent");
  const Vec3 center = (lo + hi) * 0.5;
  TriangleMesh out = mesh;
  for (Vec3& v : out.vertices) v = (v - center) / extent;
  return out;
}

ad::Var fit_unit_cube(ad::Var vertices) {
  require(vertices.shape().size() == 2 && vertices.shape()[1] == 3 && vertices.shape()[0] > 0, "E_DEGENERATE",
          "fit_unit_cube needs a non-empty (N x 3) vertex array");
  ad::Var lo = ad::min_axis(vertices, 0);
  ad::Var hi = ad::max_axis(vertices, 0);
  ad::Var center = (lo + hi) * 0.5;
  ad::Var extent = ad::max_axis(hi - lo, 0);
  require(extent.item() > 0.0, "E_DEGENERATE", "mesh has zero extent");
  return ad::div(vertices - center, extent);
}

ad::SparseMatrix graph_laplacian(const TriangleMesh& mesh) {
  const MeshTopology topo = MeshTopology::build(mesh);
  ad::SparseMatrix m;
  m.rows = m.cols = mesh.num_vertices();
  m.row_ptr.push_back(0);
  for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
    const auto& ring = topo.neighbors[i];
    require(!ring.empty(), "E_MESH", "isolated vertex " + std::to_string(i));
    const double w = -1.0 / static_cast<double>(ring.size());
    bool diagonal_done = false;
    for (std::uint32_t j : ring) {
      if (!diagonal_done && j > i) {
        m.col_index.push_back(i);
        m.values.push_back(1.0);
        diagonal_done = true;
      }
      m.col_index.push_back(j);
      m.values.push_back(w);
    }
    if (!diagonal_done) {
      m.col_index.push_back(i);
      m.values.push_back(1.0);
    }
    m.row_ptr.push_back(m.col_index.size());
  }
  return m;
}

ad::Var laplacian_apply(const ad::SparseMatrix& m, ad::Var x) {
  require(x.shape().size() == 2 && x.shape()[0] == m.cols && m.rows == m.cols, "E_SHAPE",
          "laplacian operand shape mismatch");
  const std::size_t k = x.shape()[1];
  const ad::Array& xv = x.value();
  ad::Array out(x.shape());
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
      const std::size_t c = m.col_index[e];
      if (c == r) continue;
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] += m.values[e] * (xv[c * k + j] - xv[r * k + j]);
    }
  }
  return x.tape()->record(std::move(out), {x}, [m, k](const ad::Array&, const ad::Array& g, ad::ParentGrads pg) {
    ad::Array& gx = *pg[0];
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
        const std::size_t c = m.col_index[e];
        if (c == r) continue;
        for (std::size_t j = 0; j < k; ++j) {
          gx[c * k + j] += m.values[e] * g[r * k + j];
          gx[r * k + j] -= m.values[e] * g[r * k + j];
        }
      }
    }
  });
}

std::vector<double> face_areas(const TriangleMesh& mesh) {
  std::vector<double> areas;
  areas.reserve(mesh.num_faces());
  for (const Face& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    areas.push_back(0.5 * (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a).norm());
  }
  return areas;
}

double surface_area(const TriangleMesh& mesh) {
  const auto areas = face_areas(mesh);
  return std::accumulate(areas.begin(), areas.end(), 0.0);
}

double face_area_cv(const TriangleMesh& mesh) {
  const auto areas = face_areas(mesh);
  require(!areas.empty(), "E_MESH", "mesh has no faces");
  const double n = static_cast<double>(areas.size());
  const double mu = std::accumulate(areas.begin(), areas.end(), 0.0) / n;
  double var = 0.0;
  for (double a : areas) var += (a - mu) * (a - mu);
  return std::sqrt(var / n) / mu;
}

FaceCorners face_corners(const std::vector<Face>& faces) {
  FaceCorners c;
  for (const Face& f : faces) {
    c.c0.push_back(f[0]);
    c.c1.push_back(f[1]);
    c.c2.push_back(f[2]);
  }
  return c;
}

ad::Var face_cross_products(ad::Var vertices, const FaceCorners& corners) {
  ad::Var p0 = ad::gather(vertices, corners.c0);
  ad::Var p1 = ad::gather(vertices, corners.c1);
  ad::Var p2 = ad::gather(vertices, corners.c2);
  return ad::cross3(p1 - p0, p2 - p0);
}

}  // namespace ss3d
