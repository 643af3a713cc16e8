#include "ss3d/train/remesh.hpp"

#include <cmath>
#include <limits>

#include "ss3d/common/error.hpp"
#include "ss3d/common/parallel.hpp"

namespace ss3d {
namespace {

std::vector<PoseParams> view_poses(const RemeshConfig& cfg) {
  std::vector<PoseParams> poses;
  for (double el : cfg.view_elevations) {
    for (double az : cfg.view_azimuths) {
      PoseParams p;
      p.azimuth = az;
      p.elevation = el;
      poses.push_back(p);
    }
  }
  return poses;
}

}  // namespace

RemeshConfig RemeshConfig::from_config(const KeyValueConfig& kv) {
  RemeshConfig cfg;
  cfg.iterations = static_cast<std::size_t>(kv.get_int("remesh.iterations", std::int64_t(cfg.iterations)));
  cfg.w_silhouette = kv.get_double("remesh.w_silhouette", cfg.w_silhouette);
  cfg.w_variance = kv.get_double("remesh.w_variance", cfg.w_variance);
  cfg.w_area = kv.get_double("remesh.w_area", cfg.w_area);
  cfg.subdivisions = static_cast<int>(kv.get_int("remesh.subdivisions", cfg.subdivisions));
  cfg.view_azimuths = kv.get_doubles("remesh.view_azimuths", cfg.view_azimuths);
  cfg.view_elevations = kv.get_doubles("remesh.view_elevations", cfg.view_elevations);
  cfg.render.height = cfg.render.width = static_cast<std::size_t>(kv.get_int("remesh.image_size", 32));
  cfg.learning_rate = kv.get_double("remesh.learning_rate", cfg.learning_rate);
  cfg.threads = static_cast<std::size_t>(kv.get_int("threads", 1));
  return cfg;
}

void RemeshConfig::validate() const {
  require(iterations > 0, "E_CONFIG", "remesh iteration count must be positive");
  for (double w : {w_silhouette, w_variance, w_area, learning_rate}) {
    require(std::isfinite(w) && w >= 0.0, "E_CONFIG", "remesh weights must be finite and non-negative");
  }
  require(subdivisions >= 0 && subdivisions <= 4, "E_CONFIG", "remesh subdivisions must be in [0, 4]");
  require(!view_azimuths.empty() && !view_elevations.empty(), "E_CONFIG", "remesh needs at least one view");
  for (double el : view_elevations) check_elevation(el);
  require(threads >= 1, "E_CONFIG", "threads must be at least 1");
  render.validate();
  adam.validate();
}

double mean_silhouette_iou(const TriangleMesh& a, const TriangleMesh& b, const std::vector<PoseParams>& poses,
                           const RenderConfig& render, std::size_t samples) {
  require(!poses.empty(), "E_ARG", "need at least one pose");
  double total = 0.0;
  for (const PoseParams& p : poses) total += mask_iou(hard_mask(a, p, render, samples), hard_mask(b, p, render, samples));
  return total / static_cast<double>(poses.size());
}

RemeshResult postprocess_remesh(const TriangleMesh& base, const RemeshConfig& cfg) {
  cfg.validate();
  base.validate();
  const std::vector<PoseParams> poses = view_poses(cfg);
  const RenderMesh base_render = RenderMesh::build(base);
  std::vector<ad::Array> targets(poses.size());
  parallel_for(poses.size(), cfg.threads, [&](std::size_t v) {
    ad::Tape tape;
    targets[v] = render_silhouette(base_render, tape.constant(base.vertex_array()), tape.constant(poses[v].to_vector()),
                                   cfg.render)
                     .value();
  });
  const double base_area = surface_area(base);
  require(base_area > 0.0, "E_DEGENERATE", "input mesh has zero surface area");

  TriangleMesh fresh = make_icosphere(cfg.subdivisions);
  Vec3 lo = base.vertices.front(), hi = lo;
  for (const Vec3& v : base.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  for (Vec3& v : fresh.vertices) v = 0.5 * (lo + hi) + 0.5 * v.cwiseProduct(hi - lo);
  const RenderMesh render = RenderMesh::build(fresh);
  const FaceCorners corners = face_corners(fresh.faces);

  ad::Array x = fresh.vertex_array();
  AdamConfig a = cfg.adam;
  a.alpha = cfg.learning_rate;
  AdamState adam(a, x.shape());
  RemeshResult result;
  result.cv_before = face_area_cv(base);
  double best_loss = std::numeric_limits<double>::infinity();
  ad::Array best = x;
  const double views = static_cast<double>(poses.size());
  for (std::size_t it = 0; it <= cfg.iterations; ++it) {
    // Silhouette terms per view on their own tapes.
    std::vector<double> sil(poses.size());
    std::vector<ad::Array> grads(poses.size());
    parallel_for(poses.size(), cfg.threads, [&](std::size_t v) {
      ad::Tape tape;
      const ad::Var verts = tape.variable(x);
      const ad::Var alpha = render_silhouette(render, verts, tape.constant(poses[v].to_vector()), cfg.render);
      const ad::Var l = ad::mean(ad::square(alpha - tape.constant(targets[v]))) * (cfg.w_silhouette / views);
      tape.backward(l);
      sil[v] = l.item();
      grads[v] = verts.grad();
    });
    ad::Tape tape;
    const ad::Var verts = tape.variable(x);
    const ad::Var areas = 0.5 * ad::row_norms(face_cross_products(verts, corners));
    const ad::Var mu = ad::mean(areas);
    const ad::Var var = ad::mean(ad::square(areas - ad::broadcast_to(ad::reshape(mu, {1}), areas.shape())));
    const ad::Var total_area = ad::sum(areas);
    const ad::Var reg = cfg.w_variance * (var / ad::square(mu)) + (cfg.w_area / base_area) * total_area;
    tape.backward(reg);
    double loss = reg.item();
    ad::Array g = verts.grad();
    for (std::size_t v = 0; v < poses.size(); ++v) {
      loss += sil[v];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += grads[v][i];
    }
    require(std::isfinite(loss), "E_NONFINITE", "remesh loss is not finite at iteration " + std::to_string(it));
    result.history.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = x;
    }
    if (it < cfg.iterations) adam.step(x, g);
  }
  result.mesh = fresh;
  result.mesh.set_vertices(best);
  result.iou = mean_silhouette_iou(result.mesh, base, poses, cfg.render);
  result.cv_after = face_area_cv(result.mesh);
  result.warning = result.iou < cfg.iou_target;
  return result;
}

}  // namespace ss3d
