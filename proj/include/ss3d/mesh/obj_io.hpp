#pragma once

#include <iosfwd>
#include <string>

#include "ss3d/mesh/triangle_mesh.hpp"

namespace ss3d {

/// Writes v/vt/f records. Values use 17 significant digits so they reload exactly.
void write_obj(std::ostream& out, const TriangleMesh& mesh);
void export_obj(const TriangleMesh& mesh, const std::string& path);

/// Parses v, vt and f records (other records are skipped). Polygons are fan
/// triangulated; negative indices are relative. Errors throw E_PARSE with the
/// offending line number.
TriangleMesh read_obj(std::istream& in);
TriangleMesh import_obj(const std::string& path);

}  // namespace ss3d
