#include "ss3d/train/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "batch.hpp"
#include "ss3d/common/error.hpp"
#include "ss3d/common/parallel.hpp"
#include "ss3d/io/tables.hpp"
#include "ss3d/losses/features.hpp"
#include "ss3d/mesh/obj_io.hpp"

namespace ss3d {
namespace {

constexpr std::uint64_t kBatchStream = 11;
constexpr std::uint64_t kExploreStream = 12;
constexpr double kElevationLimit = kMaxElevationDegrees - 1e-3;
constexpr std::size_t kBorderColumns = 2;

struct Context {
  FFDLattice lattice;
  RenderMesh render;
  RenderConfig rc;
  std::unique_ptr<FeatureExtractor> extractor;
  LossConfig loss;

  Context(const Stage2Model& model, const Stage2Config& cfg, std::size_t height, std::size_t width)
      : lattice(model.base), render(RenderMesh::build(model.base, model.atlas)), rc(cfg.render),
        extractor(make_extractor(cfg.extractor, cfg.feature_levels)), loss(cfg.loss) {
    rc.height = height;
    rc.width = width;
    rc.validate();
  }
};

ad::Var render_var(const Context& ctx, ad::Var vertices, ad::Var texture_logits, ad::Var pose, ad::Var bg_rows) {
  const ad::Var background = realize_background(bg_rows, ctx.rc.height, ctx.rc.width);
  return rasterize(ctx.render, vertices, realize_free_rgb(texture_logits), pose, std::nullopt, background, ctx.rc).image;
}

ad::Array render_constant(const Context& ctx, const InstanceParams& p, const FFDGrid& shape, const PoseParams& pose) {
  ad::Tape tape;
  return render_var(ctx, tape.constant(ctx.lattice.deform(shape).vertex_array()), tape.constant(p.texture),
                    tape.constant(pose.to_vector()), tape.constant(p.background.rows))
      .value();
}

double photometric_value(const Context& ctx, const ad::Array& rendered, const ad::Array& target) {
  ad::Tape tape;
  return photometric_loss(tape.constant(rendered), tape.constant(target), *ctx.extractor, ctx.loss).item();
}

double candidate_loss(const Context& ctx, const InstanceParams& p, const FFDGrid& shape, const PoseParams& pose,
                      const ad::Array& target) {
  try {
    return photometric_value(ctx, render_constant(ctx, p, shape, pose), target);
  } catch (const Error& e) {
    // Candidates leaving the frustum are excluded like non-finite ones.
    if (e.code() == "E_FRUSTUM" || e.code() == "E_NONFINITE" || e.code() == "E_GIMBAL") {
      return std::numeric_limits<double>::quiet_NaN();
    }
    throw;
  }
}

StripeBackground border_background(const ad::Array& image, std::size_t rows) {
  const std::size_t h = image.shape()[0], w = image.shape()[1];
  const std::size_t k = std::min(kBorderColumns, w / 2);
  ad::Array border({h, 2 * k, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t j = 0; j < 2 * k; ++j) {
      const std::size_t x = j < k ? j : w - 2 * k + j;
      for (std::size_t c = 0; c < 3; ++c) border[(y * 2 * k + j) * 3 + c] = image[(y * w + x) * 3 + c];
    }
  }
  return fit_background(border, rows);
}

std::vector<std::size_t> draw_batch(std::size_t eligible, std::size_t count, Rng& rng) {
  std::vector<std::size_t> pool(eligible);
  for (std::size_t i = 0; i < eligible; ++i) pool[i] = i;
  count = std::min(count, eligible);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, eligible - 1 - i)(rng);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

PoseParams clamp_pose(PoseParams p) {
  p.elevation = std::clamp(p.elevation, -kElevationLimit, kElevationLimit);
  return p;
}

// Adam states for one instance: displacements, log-aspect, pose, texture, background.
struct InstanceOptimizer {
  std::array<AdamState, 5> states;
};

InstanceOptimizer make_optimizer(const Stage2Config& cfg, const InstanceParams& p) {
  auto make = [&](double lr, const ad::Shape& shape) {
    AdamConfig a = cfg.adam;
    a.alpha = lr;
    return AdamState(a, shape);
  };
  return {{make(cfg.lr_shape, p.shape.displacements.shape()), make(cfg.lr_shape, p.shape.log_aspect.shape()),
           make(cfg.lr_pose, {6}), make(cfg.lr_texture, p.texture.shape()),
           make(cfg.lr_background, p.background.rows.shape())}};
}

std::string index_key(const std::string& name, std::size_t i) { return name + "/" + std::to_string(i); }

}  // namespace

Stage2Config Stage2Config::for_category(const std::string& category) {
  Stage2Config cfg;
  cfg.category = category;
  cfg.explore.viewpoints = viewpoint_dist(category);
  const std::string dataset = category == "aeroplane" ? "pascal-aeroplane"
                              : category == "chair"   ? "pascal-chair"
                                                      : "cifar-" + category;
  cfg.loss.lambda_rec = lambda_rec_for(dataset);
  return cfg;
}

Stage2Config Stage2Config::from_config(const KeyValueConfig& kv) {
  Stage2Config cfg = for_category(kv.get_string("category", "car"));
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  cfg.threads = static_cast<std::size_t>(kv.get_int("threads", 1));
  cfg.iterations = static_cast<std::size_t>(kv.get_int("stage2.iterations", std::int64_t(cfg.iterations)));
  cfg.batch_size = static_cast<std::size_t>(kv.get_int("stage2.batch_size", std::int64_t(cfg.batch_size)));
  cfg.curriculum = kv.get_bool("stage2.curriculum", cfg.curriculum);
  cfg.texture_patch = static_cast<std::size_t>(kv.get_int("stage2.texture_patch", std::int64_t(cfg.texture_patch)));
  cfg.background_rows =
      static_cast<std::size_t>(kv.get_int("stage2.background_rows", std::int64_t(cfg.background_rows)));
  cfg.render.sigma = kv.get_double("render.sigma", cfg.render.sigma);
  cfg.render.supersample = static_cast<std::size_t>(kv.get_int("render.supersample", std::int64_t(cfg.render.supersample)));
  cfg.extractor = kv.get_string("features.extractor", cfg.extractor);
  cfg.feature_levels = static_cast<std::size_t>(kv.get_int("features.levels", std::int64_t(cfg.feature_levels)));
  cfg.loss.lambda_rec = kv.get_double("stage2.lambda_rec", cfg.loss.lambda_rec);
  cfg.loss.level_weights = kv.get_doubles("features.level_weights", cfg.loss.level_weights);
  cfg.loss.w_rec = kv.get_double("stage2.w_rec", cfg.loss.w_rec);
  cfg.loss.w_mae = kv.get_double("stage2.w_mae", cfg.loss.w_mae);
  cfg.loss.w_tv = kv.get_double("stage2.w_tv", cfg.loss.w_tv);
  cfg.w_vpl = kv.get_double("stage2.w_vpl", cfg.w_vpl);
  cfg.explore.k_random = static_cast<std::size_t>(kv.get_int("explore.k_random", std::int64_t(cfg.explore.k_random)));
  cfg.explore.pose_sigma_degrees = kv.get_double("explore.pose_sigma_degrees", cfg.explore.pose_sigma_degrees);
  cfg.explore.shape_sigma = kv.get_double("explore.shape_sigma", cfg.explore.shape_sigma);
  cfg.explore.shape_prior.displacement_sigma =
      kv.get_double("explore.displacement_sigma", cfg.explore.shape_prior.displacement_sigma);
  cfg.explore.shape_prior.log_aspect_sigma =
      kv.get_double("explore.log_aspect_sigma", cfg.explore.shape_prior.log_aspect_sigma);
  cfg.crop.enabled = kv.get_bool("crop.enabled", cfg.crop.enabled);
  cfg.crop.free_inplane = kv.get_bool("crop.free_inplane", cfg.crop.free_inplane);
  cfg.explore.crop = cfg.crop;
  cfg.adam.beta1 = kv.get_double("adam.beta1", cfg.adam.beta1);
  cfg.adam.beta2 = kv.get_double("adam.beta2", cfg.adam.beta2);
  cfg.adam.epsilon = kv.get_double("adam.epsilon", cfg.adam.epsilon);
  cfg.lr_shape = kv.get_double("stage2.lr_shape", cfg.lr_shape);
  cfg.lr_pose = kv.get_double("stage2.lr_pose", cfg.lr_pose);
  cfg.lr_texture = kv.get_double("stage2.lr_texture", cfg.lr_texture);
  cfg.lr_background = kv.get_double("stage2.lr_background", cfg.lr_background);
  return cfg;
}

void Stage2Config::validate() const {
  require(w_vpl == 0.0, "E_CONFIG",
          "view prior learning (Kato and Harada, CVPR 2019) is not implemented; stage2.w_vpl must be 0");
  require(iterations > 0, "E_CONFIG", "stage-2 iteration count must be positive");
  require(batch_size >= 1, "E_CONFIG", "stage-2 batch size must be positive");
  require(threads >= 1, "E_CONFIG", "threads must be at least 1");
  require(feature_levels >= 1, "E_CONFIG", "need at least one feature level");
  for (double lr : {lr_shape, lr_pose, lr_texture, lr_background}) {
    require(std::isfinite(lr) && lr >= 0.0, "E_CONFIG", "learning rates must be finite and non-negative");
  }
  loss.validate();
  explore.validate();
  adam.validate();
}

std::size_t curriculum_size(std::size_t iteration, std::size_t dataset_size, bool curriculum) {
  return curriculum ? std::min(iteration + 1, dataset_size) : dataset_size;
}

Stage2Model init_stage2(const Dataset& dataset, const TriangleMesh& base, const Stage2Config& cfg,
                        const std::optional<ad::Array>& init_texture) {
  require(!dataset.empty(), "E_ARG", "stage 2 needs a non-empty dataset");
  dataset.validate();
  cfg.validate();
  base.validate();
  Stage2Model model;
  model.base = base;
  model.atlas = make_atlas(base.num_faces(), cfg.texture_patch);
  model.atlas.apply(model.base);
  const std::size_t t = model.atlas.size();
  ad::Array logits({t, t, 3});
  if (init_texture) {
    require(init_texture->shape() == ad::Shape({t, t, 3}), "E_SHAPE", "initial texture does not match the atlas");
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = logit((*init_texture)[i]);
  }
  const ViewpointDist& dist = cfg.explore.viewpoints;
  for (const Instance& item : dataset.items) {
    InstanceParams p;
    p.pose.elevation = std::clamp(0.5 * (dist.elevation_lo + dist.elevation_hi), -kElevationLimit, kElevationLimit);
    p.pose = cfg.crop.apply(p.pose);
    p.texture = logits;
    p.background = border_background(item.image, cfg.background_rows);
    model.ids.push_back(item.id);
    model.instances.push_back(std::move(p));
    BestRecord r;
    r.instance = model.records.size();
    model.records.push_back(r);
  }
  return model;
}

ad::Array render_instance(const Stage2Model& model, const InstanceParams& params, const FFDGrid& shape,
                          const PoseParams& pose, const RenderConfig& render) {
  Stage2Config cfg;
  cfg.render = render;
  const Context ctx(model, cfg, render.height, render.width);
  return render_constant(ctx, params, shape, pose);
}

double instance_loss(const Stage2Model& model, const InstanceParams& params, const ad::Array& image,
                     const Stage2Config& cfg) {
  const Context ctx(model, cfg, image.shape()[0], image.shape()[1]);
  return photometric_value(ctx, render_constant(ctx, params, params.shape, params.pose), image);
}

std::vector<Stage2Iteration> train_full(const Dataset& dataset, Stage2Model& model, const Stage2Config& cfg,
                                        const Stage2Progress& progress) {
  require(!dataset.empty(), "E_ARG", "stage 2 needs a non-empty dataset");
  dataset.validate();
  cfg.validate();
  require(model.instances.size() == dataset.size() && model.records.size() == dataset.size(), "E_SHAPE",
          "model tables do not match the dataset");
  const Context ctx(model, cfg, dataset.height(), dataset.width());
  std::vector<std::optional<InstanceOptimizer>> optimizers(dataset.size());
  std::vector<Stage2Iteration> history;

  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    const std::size_t it = static_cast<std::size_t>(model.iteration);
    const std::size_t eligible = curriculum_size(it, dataset.size(), cfg.curriculum);
    Rng rng = make_rng(cfg.seed, {kBatchStream, it});
    const std::vector<std::size_t> batch = draw_batch(eligible, cfg.batch_size, rng);
    const double scale = 1.0 / static_cast<double>(batch.size());

    std::vector<detail::ItemGraph> items(batch.size());
    std::vector<ad::Var> photometric(batch.size()), mae(batch.size()), tv(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
      const std::size_t i = batch[k];
      const InstanceParams& p = model.instances[i];
      const ad::Array& target = dataset.items[i].image;
      BestRecord record = model.records[i];
      if (!record.initialized()) record.shape = p.shape;
      Rng explore_rng = make_rng(cfg.seed, {kExploreStream, it, i});
      record = explore_pose(
          p.pose, record, explore_rng, cfg.explore,
          [&](const PoseParams& pose) { return candidate_loss(ctx, p, record.shape, pose, target); },
          static_cast<std::int64_t>(it));
      if (record.initialized()) {
        record = explore_shape(
            p.shape, record, explore_rng, cfg.explore,
            [&](const FFDGrid& shape) { return candidate_loss(ctx, p, shape, record.pose, target); },
            static_cast<std::int64_t>(it));
      }
      model.records[i] = record;

      detail::ItemGraph& item = items[k];
      ad::Tape& tape = *item.tape;
      item.leaves = {tape.variable(p.shape.displacements), tape.variable(p.shape.log_aspect),
                     tape.variable(p.pose.to_vector()), tape.variable(p.texture), tape.variable(p.background.rows)};
      if (!record.initialized()) {
        // Every candidate failed; only the texture and background terms remain.
        record.pose = p.pose;
        record.shape = p.shape;
      }
      item.output = render_var(ctx, tape.constant(ctx.lattice.deform(record.shape).vertex_array()), item.leaves[3],
                               tape.constant(record.pose.to_vector()), item.leaves[4]);
      photometric[k] = photometric_loss(item.output, tape.constant(target), *ctx.extractor, ctx.loss);
      BestRecord anchored = record;
      anchored.iteration = std::max<std::int64_t>(anchored.iteration, 0);
      mae[k] = record_matching_loss(item.leaves[0], item.leaves[1], cfg.crop.apply(item.leaves[2]), anchored);
      tv[k] = total_variation(realize_free_rgb(item.leaves[3]));
      item.local = (cfg.loss.w_rec * photometric[k] + cfg.loss.w_mae * mae[k] + cfg.loss.w_tv * tv[k]) * scale;
    });

    ad::Tape tape;
    const ad::Var rendered = tape.variable(detail::stack_outputs(items));
    std::vector<double> targets;
    for (std::size_t i : batch) {
      const auto d = dataset.items[i].image.data();
      targets.insert(targets.end(), d.begin(), d.end());
    }
    const ad::Var real = tape.constant(ad::Array(rendered.shape(), std::move(targets)));
    const FeatureBatch fr = ctx.extractor->extract(real);
    const FeatureBatch ff = ctx.extractor->extract(rendered);
    ad::Var fm = tape.constant(0.0);
    for (std::size_t l = 0; l < fr.levels.size(); ++l) {
      const double w = cfg.loss.level_weight(l);
      if (w != 0.0) fm = fm + w * feature_matching(fr.levels[l], ff.levels[l]);
    }
    const ad::Var batch_loss = cfg.loss.w_rec * fm;

    Stage2Iteration log;
    log.eligible = eligible;
    double photo_sum = 0.0, mae_sum = 0.0, tv_sum = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      photo_sum += photometric[k].item();
      mae_sum += mae[k].item();
      tv_sum += tv[k].item();
    }
    log.rec = photo_sum * scale + fm.item();
    log.mae = mae_sum * scale;
    log.tv = tv_sum * scale;
    log.total = cfg.loss.w_rec * log.rec + cfg.loss.w_mae * log.mae + cfg.loss.w_tv * log.tv;
    if (!std::isfinite(log.total)) {
      log.skipped = true;
    } else {
      tape.backward(batch_loss);
      std::vector<std::vector<ad::Array>> grads(batch.size());
      parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
        grads[k] = detail::pull_back(items[k], detail::slice_item(rendered.grad(), k));
      });
      for (std::size_t k = 0; k < batch.size(); ++k) {
        InstanceParams& p = model.instances[batch[k]];
        std::optional<InstanceOptimizer>& opt = optimizers[batch[k]];
        if (!opt) opt = make_optimizer(cfg, p);
        opt->states[0].step(p.shape.displacements, grads[k][0]);
        opt->states[1].step(p.shape.log_aspect, grads[k][1]);
        ad::Array pose = p.pose.to_vector();
        opt->states[2].step(pose, grads[k][2]);
        p.pose = clamp_pose(cfg.crop.apply(PoseParams::from_vector(pose)));
        opt->states[3].step(p.texture, grads[k][3]);
        opt->states[4].step(p.background.rows, grads[k][4]);
      }
    }
    history.push_back(log);
    ++model.iteration;
    if (progress) progress(it, log, model);
  }
  return history;
}

FinetuneConfig FinetuneConfig::from_config(const KeyValueConfig& kv) {
  FinetuneConfig ft;
  ft.steps_per_phase = static_cast<std::size_t>(kv.get_int("finetune.steps_per_phase", std::int64_t(ft.steps_per_phase)));
  ft.lr_background = kv.get_double("finetune.lr_background", ft.lr_background);
  ft.lr_pose = kv.get_double("finetune.lr_pose", ft.lr_pose);
  ft.lr_shape = kv.get_double("finetune.lr_shape", ft.lr_shape);
  return ft;
}

void FinetuneConfig::validate() const {
  for (double lr : {lr_background, lr_pose, lr_shape}) {
    require(std::isfinite(lr) && lr >= 0.0, "E_CONFIG", "fine-tuning learning rates must be finite and non-negative");
  }
  adam.validate();
}

FinetuneResult finetune_instance(const ad::Array& image, const Stage2Model& model, const InstanceParams& start,
                                 const Stage2Config& cfg, const FinetuneConfig& ft) {
  ft.validate();
  require(image.rank() == 3 && image.shape()[2] == 3, "E_SHAPE", "image must be H x W x 3");
  const Context ctx(model, cfg, image.shape()[0], image.shape()[1]);
  FinetuneResult result;
  result.params = start;
  double best = photometric_value(ctx, render_constant(ctx, start, start.shape, start.pose), image);
  result.losses[0] = best;

  // Phase 0: background rows, 1: pose vector, 2: displacements and log-aspect.
  for (int phase = 0; phase < 3; ++phase) {
    InstanceParams current = result.params;
    const double lr = phase == 0 ? ft.lr_background : phase == 1 ? ft.lr_pose : ft.lr_shape;
    AdamConfig a = ft.adam;
    a.alpha = lr;
    std::vector<AdamState> adam;
    if (phase == 0) adam.emplace_back(a, current.background.rows.shape());
    if (phase == 1) adam.emplace_back(a, ad::Shape{6});
    if (phase == 2) {
      adam.emplace_back(a, current.shape.displacements.shape());
      adam.emplace_back(a, current.shape.log_aspect.shape());
    }
    for (std::size_t s = 0; s < ft.steps_per_phase; ++s) {
      ad::Tape tape;
      const ad::Var rows = phase == 0 ? tape.variable(current.background.rows) : tape.constant(current.background.rows);
      const ad::Var pose = phase == 1 ? tape.variable(current.pose.to_vector()) : tape.constant(current.pose.to_vector());
      const ad::Var disp = phase == 2 ? tape.variable(current.shape.displacements) : tape.constant(current.shape.displacements);
      const ad::Var aspect = phase == 2 ? tape.variable(current.shape.log_aspect) : tape.constant(current.shape.log_aspect);
      double value = std::numeric_limits<double>::quiet_NaN();
      try {
        const ad::Var vertices = ctx.lattice.deform(disp, aspect);
        const ad::Var image_var =
            render_var(ctx, vertices, tape.constant(current.texture), cfg.crop.apply(pose), rows);
        const ad::Var loss = photometric_loss(image_var, tape.constant(image), *ctx.extractor, ctx.loss);
        value = loss.item();
        if (std::isfinite(value)) tape.backward(loss);
      } catch (const Error& e) {
        if (e.code() != "E_FRUSTUM" && e.code() != "E_NONFINITE") throw;
      }
      if (!std::isfinite(value)) break;
      if (value < best) {
        best = value;
        result.params = current;
      }
      if (phase == 0) adam[0].step(current.background.rows, rows.grad());
      if (phase == 1) {
        ad::Array v = current.pose.to_vector();
        adam[0].step(v, pose.grad());
        current.pose = clamp_pose(cfg.crop.apply(PoseParams::from_vector(v)));
      }
      if (phase == 2) {
        adam[0].step(current.shape.displacements, disp.grad());
        adam[1].step(current.shape.log_aspect, aspect.grad());
      }
    }
    // The last update has not been scored yet.
    if (ft.steps_per_phase > 0) {
      const double last = candidate_loss(ctx, current, current.shape, current.pose, image);
      if (std::isfinite(last) && last < best) {
        best = last;
        result.params = current;
      }
    }
    result.losses[static_cast<std::size_t>(phase) + 1] = best;
  }
  return result;
}

InstanceParams best_params(const Stage2Model& model, std::size_t index) {
  require(index < model.instances.size(), "E_ARG", "instance index out of range");
  InstanceParams p = model.instances[index];
  const BestRecord& r = model.records[index];
  if (r.initialized()) {
    p.shape = r.shape;
    p.pose = r.pose;
  }
  return p;
}

InstanceParams initial_guess(const ad::Array& image, const Stage2Model& model, const Stage2Config& cfg) {
  require(!model.instances.empty(), "E_ARG", "model has no instances");
  require(image.rank() == 3 && image.shape()[2] == 3, "E_SHAPE", "image must be H x W x 3");
  const Context ctx(model, cfg, image.shape()[0], image.shape()[1]);
  const StripeBackground bg = border_background(image, cfg.background_rows);
  InstanceParams best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < model.instances.size(); ++i) {
    InstanceParams p = best_params(model, i);
    p.background = bg;
    const double l = candidate_loss(ctx, p, p.shape, p.pose, image);
    if (std::isfinite(l) && (i == 0 || l < best_loss)) {
      best_loss = l;
      best = p;
    }
  }
  require(std::isfinite(best_loss), "E_NONFINITE", "no training instance renders a finite loss for this image");
  return best;
}

void save_checkpoint(const Stage2Model& model, const KeyValueConfig& config, const std::string& directory) {
  const std::filesystem::path root(directory);
  std::filesystem::create_directories(root);
  config.save((root / "config.txt").string());
  export_obj(model.base, (root / "base.obj").string());
  NamedArrays tables;
  tables["meta/atlas"] = ad::Array({3}, {double(model.atlas.patch), double(model.atlas.grid), double(model.atlas.num_faces)});
  tables["meta/iteration"] = ad::Array::scalar(double(model.iteration));
  for (std::size_t i = 0; i < model.instances.size(); ++i) {
    const InstanceParams& p = model.instances[i];
    tables[index_key("displacements", i)] = p.shape.displacements;
    tables[index_key("log_aspect", i)] = p.shape.log_aspect;
    tables[index_key("pose", i)] = ad::Array(
        {6}, {p.pose.azimuth, p.pose.elevation, p.pose.inplane, p.pose.center_x, p.pose.center_y, p.pose.scale});
    tables[index_key("texture", i)] = p.texture;
    tables[index_key("background", i)] = p.background.rows;
  }
  save_tables(tables, (root / "tables.bin").string());
  save_records(model.records, (root / "records.bin").string());
  std::ofstream ids(root / "ids.txt");
  for (const std::string& id : model.ids) ids << id << '\n';
  require(static_cast<bool>(ids), "E_IO", "failed to write ids in " + directory);
}

Stage2Model load_checkpoint(const std::string& directory) {
  const std::filesystem::path root(directory);
  require(std::filesystem::is_directory(root), "E_IO", "checkpoint directory " + directory + " does not exist");
  Stage2Model model;
  model.base = import_obj((root / "base.obj").string());
  const NamedArrays tables = load_tables((root / "tables.bin").string());
  const ad::Array& atlas = table_entry(tables, "meta/atlas");
  require(atlas.size() == 3, "E_PARSE", "bad atlas entry");
  model.atlas.patch = static_cast<std::size_t>(atlas[0]);
  model.atlas.grid = static_cast<std::size_t>(atlas[1]);
  model.atlas.num_faces = static_cast<std::size_t>(atlas[2]);
  require(model.atlas.num_faces == model.base.num_faces(), "E_PARSE", "atlas does not match the base mesh");
  model.atlas.apply(model.base);
  model.iteration = static_cast<std::int64_t>(table_entry(tables, "meta/iteration").item());
  std::ifstream ids(root / "ids.txt");
  require(static_cast<bool>(ids), "E_IO", "cannot open ids in " + directory);
  for (std::string id; std::getline(ids, id);) {
    if (!id.empty()) model.ids.push_back(id);
  }
  for (std::size_t i = 0; i < model.ids.size(); ++i) {
    InstanceParams p;
    p.shape.displacements = table_entry(tables, index_key("displacements", i));
    p.shape.log_aspect = table_entry(tables, index_key("log_aspect", i));
    p.shape.validate();
    const ad::Array& pose = table_entry(tables, index_key("pose", i));
    require(pose.size() == 6, "E_PARSE", "pose table must have 6 entries");
    p.pose = {pose[0], pose[1], pose[2], pose[3], pose[4], pose[5]};
    p.texture = table_entry(tables, index_key("texture", i));
    require(p.texture.shape() == ad::Shape({model.atlas.size(), model.atlas.size(), 3}), "E_PARSE",
            "texture table does not match the atlas");
    p.background.rows = table_entry(tables, index_key("background", i));
    p.background.validate();
    model.instances.push_back(std::move(p));
  }
  model.records = load_records((root / "records.bin").string());
  require(model.records.size() == model.ids.size(), "E_PARSE", "record count does not match the instances");
  for (std::size_t i = 0; i < model.records.size(); ++i) {
    require(model.records[i].instance == i, "E_PARSE", "records are not keyed by instance index");
  }
  return model;
}

}  // namespace ss3d
