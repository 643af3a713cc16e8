#include "ss3d/train/stage1.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "batch.hpp"
#include "ss3d/appearance/image_io.hpp"
#include "ss3d/common/error.hpp"
#include "ss3d/common/parallel.hpp"
#include "ss3d/losses/features.hpp"

namespace ss3d {
namespace {

constexpr std::uint64_t kEvalSeed = 0x5eed0e7a1ULL;
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kIterationStream = 2;

struct Sample {
  std::vector<std::size_t> real;
  std::vector<PoseParams> poses;
  std::vector<Lighting> lights;
};

// Draws without replacement while the dataset is large enough.
std::vector<std::size_t> draw_indices(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> out;
  if (n >= count) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, n - 1 - i)(rng);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) out.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  }
  return out;
}

Sample draw_sample(std::size_t n, const Stage1Config& cfg, Rng& rng) {
  Sample s;
  s.real = draw_indices(n, cfg.batch_size, rng);
  for (std::size_t k = 0; k < cfg.batch_size; ++k) {
    const Viewpoint v = sample_viewpoint(cfg.viewpoints, rng);
    PoseParams p;
    p.azimuth = v.azimuth;
    p.elevation = v.elevation;
    s.poses.push_back(p);
    s.lights.push_back(sample_light(rng, cfg.lights));
  }
  return s;
}

ad::Array stack_images(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  const std::size_t h = dataset.height(), w = dataset.width();
  std::vector<double> values;
  values.reserve(indices.size() * h * w * 3);
  for (std::size_t i : indices) {
    const auto d = dataset.items[i].image.data();
    values.insert(values.end(), d.begin(), d.end());
  }
  return ad::Array({indices.size(), h, w, 3}, std::move(values));
}

// Shared stage-1 parameters in leaf order: offsets, weights, palette, background rows.
struct Params {
  ad::Array offsets;
  ad::Array weights;
  ad::Array palette;
  ad::Array rows;

  std::vector<ad::Array*> list() { return {&offsets, &weights, &palette, &rows}; }
};

struct Model {
  Stage1Shape shape;
  TextureAtlas atlas;
  RenderMesh render;
};

Model build_model(const Stage1Config& cfg) {
  Stage1Shape shape(make_icosphere(cfg.subdivisions), cfg.dims, 0);
  TextureAtlas atlas = make_atlas(shape.base().num_faces(), cfg.texture_patch);
  RenderMesh render = RenderMesh::build(shape.base(), atlas);
  return {std::move(shape), atlas, std::move(render)};
}

detail::ItemGraph render_item(const Model& model, const Params& p, const PoseParams& pose, const Lighting& light,
                              const RenderConfig& render) {
  detail::ItemGraph item;
  ad::Tape& tape = *item.tape;
  item.leaves = {tape.variable(p.offsets), tape.variable(p.weights), tape.variable(p.palette), tape.variable(p.rows)};
  const ad::Var vertices = model.shape.deform_free(item.leaves[0]);
  const ad::Var texture = realize_few_color(item.leaves[1], item.leaves[2]);
  const ad::Var background = realize_background(item.leaves[3], render.height, render.width);
  item.output = rasterize(model.render, vertices, texture, tape.constant(pose.to_vector()),
                          tape.constant(light.to_array()), background, render)
                    .image;
  return item;
}

LossConfig loss_config(const Stage1Config& cfg) {
  LossConfig l;
  l.lambda_rec = cfg.lambda_rec;
  return l;
}

RenderConfig render_config(const Stage1Config& cfg, const Dataset& dataset) {
  RenderConfig r = cfg.render;
  r.height = dataset.height();
  r.width = dataset.width();
  r.validate();
  return r;
}

double rec_value(const ad::Array& real, const ad::Array& fake, const FeatureExtractor& extractor, const LossConfig& l) {
  ad::Tape tape;
  return rec_loss(extractor.extract(tape.constant(real)), extractor.extract(tape.constant(fake)), l).value().item();
}

void dump_diagnostics(const Stage1Config& cfg, std::size_t iteration, const ad::Array& fake, double rec,
                      double smooth) {
  if (cfg.dump_dir.empty()) return;
  std::filesystem::create_directories(cfg.dump_dir);
  std::vector<ad::Array> images;
  for (std::size_t i = 0; i < fake.shape()[0]; ++i) {
    ad::Array img = detail::slice_item(fake, i);
    for (double& v : img.data()) v = std::isfinite(v) ? v : 0.0;
    images.push_back(std::move(img));
  }
  write_png(cfg.dump_dir + "/renders.png", tile_images(images, 8));
  std::ofstream out(cfg.dump_dir + "/loss.txt");
  out << "iteration " << iteration << "\nrec " << rec << "\nsmooth " << smooth << '\n';
}

}  // namespace

Stage1Config Stage1Config::for_category(const std::string& category) {
  Stage1Config cfg;
  cfg.category = category;
  cfg.dims = category_dims(category);
  cfg.viewpoints = viewpoint_dist(category);
  cfg.num_colors = category == "horse" ? 1 : 4;
  const std::string dataset = category == "aeroplane" ? "pascal-aeroplane"
                              : category == "chair"   ? "pascal-chair"
                                                      : "cifar-" + category;
  cfg.lambda_rec = lambda_rec_for(dataset);
  cfg.smoothness.lambda_laplacian_sq = 0.05;
  cfg.smoothness.lambda_angle_sq = 2e-4;
  return cfg;
}

Stage1Config Stage1Config::from_config(const KeyValueConfig& kv) {
  Stage1Config cfg = for_category(kv.get_string("category", "car"));
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  cfg.threads = static_cast<std::size_t>(kv.get_int("threads", 1));
  cfg.batch_size = static_cast<std::size_t>(kv.get_int("stage1.batch_size", std::int64_t(cfg.batch_size)));
  cfg.iterations = static_cast<std::size_t>(kv.get_int("stage1.iterations", std::int64_t(cfg.iterations)));
  cfg.num_colors = static_cast<std::size_t>(kv.get_int("stage1.num_colors", std::int64_t(cfg.num_colors)));
  cfg.lambda_rec = kv.get_double("stage1.lambda_rec", cfg.lambda_rec);
  cfg.subdivisions = static_cast<int>(kv.get_int("stage1.subdivisions", cfg.subdivisions));
  cfg.texture_patch = static_cast<std::size_t>(kv.get_int("stage1.texture_patch", std::int64_t(cfg.texture_patch)));
  cfg.background_rows =
      static_cast<std::size_t>(kv.get_int("stage1.background_rows", std::int64_t(cfg.background_rows)));
  cfg.render.sigma = kv.get_double("render.sigma", cfg.render.sigma);
  cfg.render.supersample = static_cast<std::size_t>(kv.get_int("render.supersample", std::int64_t(cfg.render.supersample)));
  cfg.extractor = kv.get_string("features.extractor", cfg.extractor);
  cfg.feature_levels = static_cast<std::size_t>(kv.get_int("features.levels", std::int64_t(cfg.feature_levels)));
  cfg.adam.beta1 = kv.get_double("adam.beta1", cfg.adam.beta1);
  cfg.adam.beta2 = kv.get_double("adam.beta2", cfg.adam.beta2);
  cfg.adam.epsilon = kv.get_double("adam.epsilon", cfg.adam.epsilon);
  cfg.lr_shape = kv.get_double("stage1.lr_shape", cfg.lr_shape);
  cfg.lr_texture = kv.get_double("stage1.lr_texture", cfg.lr_texture);
  cfg.lr_background = kv.get_double("stage1.lr_background", cfg.lr_background);
  SmoothnessConfig& s = cfg.smoothness;
  s.laplacian_tolerance = kv.get_double("stage1.laplacian_tolerance", s.laplacian_tolerance);
  s.angle_tolerance = kv.get_double("stage1.angle_tolerance", s.angle_tolerance);
  s.lambda_laplacian_hinge = kv.get_double("stage1.lambda_laplacian_hinge", s.lambda_laplacian_hinge);
  s.lambda_laplacian_sq = kv.get_double("stage1.lambda_laplacian_sq", s.lambda_laplacian_sq);
  s.lambda_angle_hinge = kv.get_double("stage1.lambda_angle_hinge", s.lambda_angle_hinge);
  s.lambda_angle_sq = kv.get_double("stage1.lambda_angle_sq", s.lambda_angle_sq);
  const std::vector<double> ambient = kv.get_doubles("stage1.ambient", {cfg.lights.ambient_lo, cfg.lights.ambient_hi});
  const std::vector<double> directional =
      kv.get_doubles("stage1.directional", {cfg.lights.directional_lo, cfg.lights.directional_hi});
  require(ambient.size() == 2 && directional.size() == 2, "E_CONFIG", "light ranges take two values");
  cfg.lights = {ambient[0], ambient[1], directional[0], directional[1]};
  cfg.dump_dir = kv.get_string("stage1.dump_dir", cfg.dump_dir);
  return cfg;
}

void Stage1Config::validate() const {
  require(iterations > 0, "E_CONFIG", "stage-1 iteration count must be positive");
  require(batch_size >= 2, "E_CONFIG", "stage-1 batch size must be at least 2");
  require(num_colors >= 1, "E_CONFIG", "stage-1 texture needs at least one color");
  require(threads >= 1, "E_CONFIG", "threads must be at least 1");
  require(subdivisions >= 0 && subdivisions <= 4, "E_CONFIG", "stage-1 subdivisions must be in [0, 4]");
  require(feature_levels >= 1, "E_CONFIG", "need at least one feature level");
  for (double lr : {lr_shape, lr_texture, lr_background}) {
    require(std::isfinite(lr) && lr >= 0.0, "E_CONFIG", "learning rates must be finite and non-negative");
  }
  require(lights.ambient_lo <= lights.ambient_hi && lights.directional_lo <= lights.directional_hi, "E_CONFIG",
          "light ranges are reversed");
  dims.validate();
  viewpoints.validate();
  smoothness.validate();
  adam.validate();
  loss_config(*this).validate();
}

Stage1Result learn_base_shape(const Dataset& dataset, const Stage1Config& cfg, const Stage1Progress& progress) {
  require(!dataset.empty(), "E_ARG", "stage 1 needs a non-empty dataset");
  dataset.validate();
  cfg.validate();
  const RenderConfig render = render_config(cfg, dataset);
  require(cfg.background_rows <= render.height, "E_CONFIG", "more background rows than image rows");
  const Model model = build_model(cfg);
  const SmoothnessLoss smoothness(model.shape.base());
  const auto extractor = make_extractor(cfg.extractor, cfg.feature_levels);
  const LossConfig lcfg = loss_config(cfg);

  // Small random logits break the symmetry between palette colors.
  Params p;
  Rng init = make_rng(cfg.seed, {kInitStream});
  p.offsets = ad::Array({model.shape.num_free(), 3});
  p.weights = ad::Array({model.atlas.size(), model.atlas.size(), cfg.num_colors});
  for (double& v : p.weights.data()) v = gaussian(init, 0.1);
  p.palette = ad::Array({cfg.num_colors, 3});
  for (double& v : p.palette.data()) v = gaussian(init, 1.0);
  {
    ad::Array mean({dataset.height(), dataset.width(), 3});
    for (const Instance& item : dataset.items) {
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += item.image[i] / double(dataset.size());
    }
    p.rows = fit_background(mean, cfg.background_rows).rows;
  }
  const std::vector<double> rates{cfg.lr_shape, cfg.lr_texture, cfg.lr_texture, cfg.lr_background};
  std::vector<AdamState> adam;
  {
    const auto list = p.list();
    for (std::size_t k = 0; k < list.size(); ++k) {
      AdamConfig a = cfg.adam;
      a.alpha = rates[k];
      adam.emplace_back(a, list[k]->shape());
    }
  }

  Stage1Result result;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Rng rng = make_rng(cfg.seed, {kIterationStream, it});
    const Sample sample = draw_sample(dataset.size(), cfg, rng);
    std::vector<detail::ItemGraph> items(cfg.batch_size);
    parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t k) {
      items[k] = render_item(model, p, sample.poses[k], sample.lights[k], render);
    });

    ad::Tape tape;
    const ad::Var fake = tape.variable(detail::stack_outputs(items));
    const ad::Var real = tape.constant(stack_images(dataset, sample.real));
    const ad::Var rec = rec_loss(extractor->extract(real), extractor->extract(fake), lcfg);
    const ad::Var offsets = tape.variable(p.offsets);
    const ad::Var smooth = smoothness.terms(model.shape.deform_free(offsets), cfg.smoothness).total;
    const ad::Var total = rec + smooth;
    const Stage1Iteration record{total.item(), rec.item(), smooth.item()};
    if (!std::isfinite(record.total)) {
      dump_diagnostics(cfg, it, fake.value(), record.rec, record.smooth);
      fail("E_NONFINITE", "stage-1 loss is not finite at iteration " + std::to_string(it));
    }
    tape.backward(total);

    std::vector<std::vector<ad::Array>> member_grads(cfg.batch_size);
    parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t k) {
      member_grads[k] = detail::pull_back(items[k], detail::slice_item(fake.grad(), k));
    });
    std::vector<ad::Array> grads;
    for (const auto& g : member_grads) detail::accumulate(grads, g);
    for (std::size_t i = 0; i < grads[0].size(); ++i) grads[0][i] += offsets.grad()[i];

    auto list = p.list();
    for (std::size_t k = 0; k < list.size(); ++k) adam[k].step(*list[k], grads[k]);
    result.history.push_back(record);
    if (progress) progress(it, record);
  }

  result.offsets = p.offsets;
  result.mesh = model.shape.mesh(p.offsets);
  result.atlas = model.atlas;
  result.atlas.apply(result.mesh);
  result.texture = TextureSpec::few_color(model.atlas.size(), cfg.num_colors);
  result.texture.weights = p.weights;
  result.texture.palette = p.palette;
  result.background.rows = p.rows;
  result.final_rec = evaluate_stage1(dataset, result, cfg);
  return result;
}

std::vector<ad::Array> render_stage1(const Stage1Result& result, const std::vector<PoseParams>& poses,
                                     const Lighting& light, const RenderConfig& render) {
  const RenderMesh mesh = RenderMesh::build(result.mesh, result.atlas);
  const ad::Array texture = realize_texture(result.texture);
  const ad::Array background = realize_background(result.background, render.height, render.width);
  std::vector<ad::Array> out;
  for (const PoseParams& pose : poses) {
    ad::Tape tape;
    out.push_back(rasterize(mesh, tape.constant(result.mesh.vertex_array()), tape.constant(texture),
                            tape.constant(pose.to_vector()), tape.constant(light.to_array()), tape.constant(background),
                            render)
                      .image.value());
  }
  return out;
}

double evaluate_stage1(const Dataset& dataset, const Stage1Result& result, const Stage1Config& cfg) {
  const RenderConfig render = render_config(cfg, dataset);
  Rng rng = make_rng(kEvalSeed);
  const Sample sample = draw_sample(dataset.size(), cfg, rng);
  const RenderMesh mesh = RenderMesh::build(result.mesh, result.atlas);
  const ad::Array texture = realize_texture(result.texture);
  const ad::Array background = realize_background(result.background, render.height, render.width);
  std::vector<ad::Array> images(cfg.batch_size);
  parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t k) {
    ad::Tape tape;
    images[k] = rasterize(mesh, tape.constant(result.mesh.vertex_array()), tape.constant(texture),
                          tape.constant(sample.poses[k].to_vector()), tape.constant(sample.lights[k].to_array()),
                          tape.constant(background), render)
                    .image.value();
  });
  std::vector<double> values;
  for (const ad::Array& img : images) values.insert(values.end(), img.data().begin(), img.data().end());
  const ad::Array fake({cfg.batch_size, render.height, render.width, 3}, std::move(values));
  return rec_value(stack_images(dataset, sample.real), fake, *make_extractor(cfg.extractor, cfg.feature_levels),
                   loss_config(cfg));
}

std::size_t select_best_run(const std::vector<Stage1Result>& runs) {
  require(!runs.empty(), "E_ARG", "no stage-1 runs to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].final_rec < runs[best].final_rec) best = i;
  }
  return best;
}

}  // namespace ss3d
