#include "ss3d/mesh/obj_io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
  fail("E_PARSE", "obj line " + std::to_string(line) + ": " + what);
}

std::uint32_t resolve_index(long raw, std::size_t count, std::size_t line) {
  long idx = raw > 0 ? raw - 1 : static_cast<long>(count) + raw;
  if (raw == 0 || idx < 0 || static_cast<std::size_t>(idx) >= count) {
    parse_error(line, "index " + std::to_string(raw) + " out of range");
  }
  return static_cast<std::uint32_t>(idx);
}

}  // namespace

void write_obj(std::ostream& out, const TriangleMesh& mesh) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const Vec3& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const Vec2& t : mesh.uvs) out << "vt " << t[0] << ' ' << t[1] << '\n';
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    out << 'f';
    for (int k = 0; k < 3; ++k) {
      out << ' ' << mesh.faces[f][k] + 1;
      if (mesh.has_uvs()) out << '/' << mesh.face_uvs[f][k] + 1;
    }
    out << '\n';
  }
}

void export_obj(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "E_IO", "cannot write " + path);
  write_obj(out, mesh);
  require(out.good(), "E_IO", "failed writing " + path);
}

TriangleMesh read_obj(std::istream& in) {
  TriangleMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  bool any_face_uv = false;
  bool any_face_without_uv = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v[0] >> v[1] >> v[2])) parse_error(line_no, "vertex needs three coordinates");
      mesh.vertices.push_back(v);
    } else if (tag == "vt") {
      Vec2 t;
      if (!(ls >> t[0] >> t[1])) parse_error(line_no, "texture coordinate needs two values");
      mesh.uvs.push_back(t);
    } else if (tag == "f") {
      std::vector<std::uint32_t> vs;
      std::vector<std::uint32_t> ts;
      std::string token;
      while (ls >> token) {
        std::istringstream ts_stream(token);
        long vi = 0;
        if (!(ts_stream >> vi)) parse_error(line_no, "bad face token '" + token + "'");
        vs.push_back(resolve_index(vi, mesh.vertices.size(), line_no));
        if (ts_stream.peek() == '/') {
          ts_stream.get();
          if (ts_stream.peek() != '/') {
            long ti = 0;
            if (!(ts_stream >> ti)) parse_error(line_no, "bad texture index in '" + token + "'");
            ts.push_back(resolve_index(ti, mesh.uvs.size(), line_no));
          }
        }
      }
      if (vs.size() < 3) parse_error(line_no, "face needs at least three vertices");
      if (!ts.empty() && ts.size() != vs.size()) parse_error(line_no, "mixed texture indices in face");
      for (std::size_t k = 1; k + 1 < vs.size(); ++k) {
        mesh.faces.push_back({vs[0], vs[k], vs[k + 1]});
        if (!ts.empty()) mesh.face_uvs.push_back({ts[0], ts[k], ts[k + 1]});
      }
      (ts.empty() ? any_face_without_uv : any_face_uv) = true;
    }
  }
  if (mesh.vertices.empty()) parse_error(line_no, "no vertices");
  if (mesh.faces.empty()) parse_error(line_no, "no faces");
  if (any_face_uv && any_face_without_uv) parse_error(line_no, "texture indices on some faces only");
  try {
    mesh.validate();
  } catch (const Error& e) {
    parse_error(line_no, e.what());
  }
  return mesh;
}

TriangleMesh import_obj(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "E_IO", "cannot open " + path);
  return read_obj(in);
}

}  // namespace ss3d
