#include "ss3d/io/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "ss3d/appearance/image_io.hpp"
#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

double parse_number(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == text.size() && used > 0 && std::isfinite(v), "E_PARSE", where + ": bad number '" + text + "'");
  return v;
}

std::string format_number(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::size_t Dataset::height() const { return items.empty() ? 0 : items.front().image.shape()[0]; }
std::size_t Dataset::width() const { return items.empty() ? 0 : items.front().image.shape()[1]; }

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const Instance& item : items) {
    require(item.image.rank() == 3 && item.image.shape()[2] == 3, "E_SHAPE", item.id + ": images must be H x W x 3");
    require(item.image.shape() == items.front().image.shape(), "E_SHAPE",
            item.id + ": image size differs from the first instance");
    require(ids.insert(item.id).second, "E_ARG", "duplicate instance id '" + item.id + "'");
  }
}

Dataset load_dataset(const std::string& directory, const std::string& manifest) {
  const std::filesystem::path root(directory);
  const std::string manifest_path = (root / manifest).string();
  std::ifstream in(manifest_path);
  require(static_cast<bool>(in), "E_IO", "cannot open " + manifest_path);
  Dataset dataset;
  std::set<std::string> ids;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = manifest_path + ":" + std::to_string(number);
    const std::vector<std::string> f = split_tabs(line);
    require(f.size() == 2 || f.size() == 5, "E_PARSE", where + ": expected id, path and optionally 3 angles");
    require(!f[0].empty(), "E_PARSE", where + ": empty id");
    require(ids.insert(f[0]).second, "E_ARG", where + ": duplicate id '" + f[0] + "'");
    Instance item;
    item.id = f[0];
    item.image = read_image((root / f[1]).string());
    if (!dataset.items.empty()) {
      require(item.image.shape() == dataset.items.front().image.shape(), "E_SHAPE",
              where + ": image size differs from the first instance");
    }
    if (f.size() == 5) {
      PoseParams p;
      p.azimuth = parse_number(f[2], where);
      p.elevation = parse_number(f[3], where);
      p.inplane = parse_number(f[4], where);
      item.pose = p;
    }
    dataset.items.push_back(std::move(item));
  }
  require(!dataset.empty(), "E_ARG", manifest_path + ": manifest lists no images");
  return dataset;
}

void save_dataset(const Dataset& dataset, const std::string& directory, const std::string& manifest) {
  dataset.validate();
  const std::filesystem::path root(directory);
  std::filesystem::create_directories(root);
  std::ofstream out(root / manifest);
  require(static_cast<bool>(out), "E_IO", "cannot write manifest in " + directory);
  for (const Instance& item : dataset.items) {
    const std::string file = item.id + ".png";
    write_png((root / file).string(), item.image);
    out << item.id << '\t' << file;
    if (item.pose) {
      out << '\t' << format_number(item.pose->azimuth) << '\t' << format_number(item.pose->elevation) << '\t'
          << format_number(item.pose->inplane);
    }
    out << '\n';
  }
  require(static_cast<bool>(out), "E_IO", "failed to write manifest in " + directory);
}

TriangleMesh make_ellipsoid(const Vec3& extents, int subdivisions) {
  return make_tapered_ellipsoid(extents, 0.0, subdivisions);
}

TriangleMesh make_tapered_ellipsoid(const Vec3& extents, double taper, int subdivisions) {
  require(extents.minCoeff() > 0.0 && std::isfinite(extents.maxCoeff()), "E_ARG", "ellipsoid extents must be positive");
  require(std::abs(taper) < 1.0, "E_ARG", "taper must be in (-1, 1)");
  TriangleMesh mesh = make_icosphere(subdivisions);
  for (Vec3& v : mesh.vertices) {
    const double s = 1.0 + taper * v.z();
    v = Vec3(0.5 * extents.x() * v.x() * s, 0.5 * extents.y() * v.y() * s, 0.5 * extents.z() * v.z());
  }
  return fit_unit_cube(mesh);
}

SyntheticScene make_scene(const TriangleMesh& mesh, std::size_t patch, const std::function<Vec3(const Vec3&)>& paint) {
  SyntheticScene scene;
  scene.mesh = mesh;
  scene.atlas = make_atlas(mesh.num_faces(), patch);
  scene.atlas.apply(scene.mesh);
  const std::size_t t = scene.atlas.size();
  scene.texture = ad::Array({t, t, 3}, 0.5);
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Face& face = mesh.faces[f];
    const Vec3 centroid = (mesh.vertices[face[0]] + mesh.vertices[face[1]] + mesh.vertices[face[2]]) / 3.0;
    const Vec3 color = paint(centroid);
    const std::size_t x0 = (f % scene.atlas.grid) * patch, y0 = (f / scene.atlas.grid) * patch;
    for (std::size_t y = y0; y < y0 + patch; ++y) {
      for (std::size_t x = x0; x < x0 + patch; ++x) {
        for (int c = 0; c < 3; ++c) scene.texture[(y * t + x) * 3 + std::size_t(c)] = color[c];
      }
    }
  }
  return scene;
}

Dataset make_synthetic_dataset(const SyntheticScene& scene, const SyntheticOptions& options) {
  options.render.validate();
  options.dist.validate();
  Dataset dataset;
  if (options.views == 0) return dataset;
  const RenderMesh render = RenderMesh::build(scene.mesh, scene.atlas);
  const ad::Array background =
      realize_background(scene.background, options.render.height, options.render.width);
  for (std::size_t i = 0; i < options.views; ++i) {
    Rng rng = make_rng(options.seed, {i});
    const Viewpoint v = sample_viewpoint(options.dist, rng);
    PoseParams pose;
    pose.azimuth = v.azimuth;
    pose.elevation = v.elevation;
    ad::Tape tape;
    std::optional<ad::Var> light;
    if (options.directional_light) light = tape.constant(sample_light(rng, options.lights).to_array());
    const RenderOutput out = rasterize(render, tape.constant(scene.mesh.vertex_array()), tape.constant(scene.texture),
                                       tape.constant(pose.to_vector()), light, tape.constant(background), options.render);
    Instance item;
    std::ostringstream id;
    id << "synth_";
    id.width(4);
    id.fill('0');
    id << i;
    item.id = id.str();
    item.image = out.image.value();
    if (options.quantize) {
      for (double& c : item.image.data()) c = std::round(std::clamp(c, 0.0, 1.0) * 255.0) / 255.0;
    }
    item.pose = pose;
    dataset.items.push_back(std::move(item));
  }
  return dataset;
}

double rotation_error(const PoseParams& a, const PoseParams& b) {
  const Eigen::Matrix3d r = pose_rotation(a).transpose() * pose_rotation(b);
  return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0));
}

PoseEvalResult eval_pose(const std::vector<NamedPose>& predicted, const std::vector<NamedPose>& truth) {
  std::map<std::string, const PoseParams*> lookup;
  for (const NamedPose& t : truth) {
    require(lookup.emplace(t.id, &t.pose).second, "E_ARG", "duplicate ground-truth id '" + t.id + "'");
  }
  require(predicted.size() == truth.size(), "E_ARG", "prediction and ground-truth counts differ");
  PoseEvalResult result;
  std::set<std::string> seen;
  std::size_t good = 0;
  for (const NamedPose& p : predicted) {
    const auto it = lookup.find(p.id);
    require(it != lookup.end(), "E_ARG", "no ground truth for id '" + p.id + "'");
    require(seen.insert(p.id).second, "E_ARG", "duplicate predicted id '" + p.id + "'");
    const double e = rotation_error(p.pose, *it->second);
    result.ids.push_back(p.id);
    result.errors.push_back(e);
    if (e < std::numbers::pi / 6.0) ++good;
  }
  result.accuracy = predicted.empty() ? 0.0 : static_cast<double>(good) / static_cast<double>(predicted.size());
  return result;
}

std::vector<NamedPose> dataset_poses(const Dataset& dataset) {
  std::vector<NamedPose> out;
  for (const Instance& item : dataset.items) {
    require(item.pose.has_value(), "E_ARG", "instance '" + item.id + "' has no ground-truth pose");
    out.push_back({item.id, *item.pose});
  }
  return out;
}

void save_poses(const std::vector<NamedPose>& poses, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "E_IO", "cannot open " + path);
  for (const NamedPose& p : poses) {
    out << p.id;
    for (double v : {p.pose.azimuth, p.pose.elevation, p.pose.inplane, p.pose.center_x, p.pose.center_y, p.pose.scale}) {
      out << '\t' << format_number(v);
    }
    out << '\n';
  }
  require(static_cast<bool>(out), "E_IO", "failed to write " + path);
}

std::vector<NamedPose> load_poses(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "E_IO", "cannot open " + path);
  std::vector<NamedPose> out;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(number);
    const std::vector<std::string> f = split_tabs(line);
    require(f.size() == 7 || f.size() == 4, "E_PARSE", where + ": expected id and 3 or 6 pose values");
    NamedPose p;
    p.id = f[0];
    p.pose.azimuth = parse_number(f[1], where);
    p.pose.elevation = parse_number(f[2], where);
    p.pose.inplane = parse_number(f[3], where);
    if (f.size() == 7) {
      p.pose.center_x = parse_number(f[4], where);
      p.pose.center_y = parse_number(f[5], where);
      p.pose.scale = parse_number(f[6], where);
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace ss3d
