#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ss3d/appearance/image_io.hpp"
#include "ss3d/common/error.hpp"
#include "ss3d/io/config.hpp"
#include "ss3d/io/dataset.hpp"
#include "ss3d/io/tables.hpp"
#include "ss3d/mesh/obj_io.hpp"
#include "ss3d/train/remesh.hpp"
#include "ss3d/train/stage1.hpp"
#include "ss3d/train/stage2.hpp"

namespace fs = std::filesystem;
using namespace ss3d;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool verbose = false;
};

// Every section of the run config, parsed together so any unknown key is rejected.
struct RunConfig {
  KeyValueConfig kv;
  Stage1Config stage1;
  Stage2Config stage2;
  RemeshConfig remesh;
  FinetuneConfig finetune;
  std::size_t render_every = 100;
  std::size_t log_every = 10;
  std::string data_dir;
  std::size_t data_height = 0;
  std::size_t data_width = 0;
};

RunConfig parse_run_config(KeyValueConfig kv, const Globals& g) {
  if (g.seed) kv.set("seed", std::to_string(*g.seed));
  if (g.threads) kv.set("threads", std::to_string(*g.threads));
  RunConfig rc;
  rc.stage1 = Stage1Config::from_config(kv);
  rc.stage2 = Stage2Config::from_config(kv);
  rc.remesh = RemeshConfig::from_config(kv);
  rc.finetune = FinetuneConfig::from_config(kv);
  rc.render_every = static_cast<std::size_t>(kv.get_int("train.render_every", 100));
  rc.log_every = static_cast<std::size_t>(kv.get_int("log_every", 10));
  rc.data_dir = kv.get_string("data.dir", "");
  rc.data_height = static_cast<std::size_t>(kv.get_int("data.height", 0));
  rc.data_width = static_cast<std::size_t>(kv.get_int("data.width", 0));
  kv.check_all_used();
  rc.kv = std::move(kv);
  return rc;
}

RunConfig load_run_config(const std::string& path, const Globals& g) {
  return parse_run_config(path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path), g);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "E_IO", "cannot write " + path.string());
  return out;
}

Vec3 parse_color(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  for (std::string part; std::getline(in, part, ',');) {
    try {
      v.push_back(std::stod(part));
    } catch (const std::exception&) {
      fail("E_ARG", "bad color component '" + part + "'");
    }
  }
  require(v.size() == 3, "E_ARG", "colors need three comma-separated components");
  return Vec3(v[0], v[1], v[2]);
}

std::vector<PoseParams> turntable_poses(double start, double elevation, double step) {
  require(step > 0.0 && std::isfinite(step), "E_ARG", "turntable step must be positive");
  const auto count = static_cast<std::size_t>(std::ceil(360.0 / step - 1e-9));
  std::vector<PoseParams> poses;
  for (std::size_t k = 0; k < count; ++k) {
    PoseParams p;
    p.azimuth = start + static_cast<double>(k) * step;
    p.elevation = elevation;
    poses.push_back(p);
  }
  return poses;
}

struct Checkpoint {
  RunConfig rc;
  Stage2Model model;
  RenderConfig render;
};

Checkpoint open_checkpoint(const std::string& dir, const Globals& g) {
  Checkpoint c;
  c.model = load_checkpoint(dir);
  c.rc = load_run_config((fs::path(dir) / "config.txt").string(), g);
  require(c.rc.data_height > 0 && c.rc.data_width > 0, "E_PARSE", "checkpoint config lacks data.height/data.width");
  c.render = c.rc.stage2.render;
  c.render.height = c.rc.data_height;
  c.render.width = c.rc.data_width;
  return c;
}

std::size_t find_instance(const Stage2Model& model, const std::string& id) {
  for (std::size_t i = 0; i < model.ids.size(); ++i) {
    if (model.ids[i] == id) return i;
  }
  fail("E_ARG", "no instance with id '" + id + "' in the checkpoint");
}

ad::Array render_grid(const Stage2Model& model, const RenderConfig& render, std::size_t count) {
  std::vector<ad::Array> images;
  for (std::size_t i = 0; i < std::min(count, model.instances.size()); ++i) {
    const InstanceParams p = best_params(model, i);
    images.push_back(render_instance(model, p, p.shape, p.pose, render));
  }
  return tile_images(images, 4);
}

void write_params(const InstanceParams& p, const std::string& path) {
  NamedArrays t;
  t["displacements"] = p.shape.displacements;
  t["log_aspect"] = p.shape.log_aspect;
  t["pose"] = ad::Array({6}, {p.pose.azimuth, p.pose.elevation, p.pose.inplane, p.pose.center_x, p.pose.center_y,
                              p.pose.scale});
  t["texture"] = p.texture;
  t["background"] = p.background.rows;
  save_tables(t, path);
}

// Commands.

struct SynthArgs {
  std::string mesh, dist = "car", out, front = "0.85,0.2,0.15", back = "0.15,0.3,0.85";
  std::size_t views = 64, size = 32, patch = 4;
  bool no_light = false;
};

void run_synth(const SynthArgs& a, const Globals& g) {
  TriangleMesh mesh = import_obj(a.mesh);
  mesh.validate();
  const Vec3 front = parse_color(a.front), back = parse_color(a.back);
  const SyntheticScene scene =
      make_scene(mesh, a.patch, [&](const Vec3& c) { return c.z() > 0.0 ? front : back; });
  SyntheticOptions opt;
  opt.views = a.views;
  opt.dist = viewpoint_dist(a.dist);
  opt.seed = g.seed.value_or(0);
  opt.render.height = opt.render.width = a.size;
  opt.directional_light = !a.no_light;
  const Dataset data = make_synthetic_dataset(scene, opt);
  save_dataset(data, a.out);
  save_poses(dataset_poses(data), (fs::path(a.out) / "truth.tsv").string());
  export_obj(scene.mesh, (fs::path(a.out) / "scene.obj").string());
  save_tables({{"texture", scene.texture}}, (fs::path(a.out) / "scene_texture.bin").string());
  std::cout << "wrote " << data.size() << " views to " << a.out << "\n";
}

struct LearnBaseArgs {
  std::string config, data, out;
  std::size_t seeds = 1;
};

void run_learn_base(const LearnBaseArgs& a, const Globals& g) {
  require(a.seeds >= 1, "E_ARG", "--seeds must be at least 1");
  const RunConfig rc = load_run_config(a.config, g);
  const Dataset data = load_dataset(a.data);
  fs::create_directories(a.out);
  RenderConfig render = rc.stage1.render;
  render.height = data.height();
  render.width = data.width();
  const std::vector<PoseParams> views = turntable_poses(0.0, 15.0, 45.0);
  std::vector<Stage1Result> runs;
  for (std::size_t r = 0; r < a.seeds; ++r) {
    Stage1Config cfg = rc.stage1;
    cfg.seed = rc.stage1.seed + r;
    const fs::path dir = fs::path(a.out) / ("seed_" + std::to_string(cfg.seed));
    fs::create_directories(dir);
    if (cfg.dump_dir.empty()) cfg.dump_dir = dir.string();
    std::ofstream log = open_out(dir / "loss.tsv");
    log << "iteration\ttotal\trec\tsmooth\n";
    Stage1Result result = learn_base_shape(data, cfg, [&](std::size_t it, const Stage1Iteration& s) {
      log << it << '\t' << fmt(s.total) << '\t' << fmt(s.rec) << '\t' << fmt(s.smooth) << '\n';
      if (g.verbose && it % rc.log_every == 0) {
        std::cerr << "seed " << cfg.seed << " iteration " << it << " total " << s.total << " rec " << s.rec << "\n";
      }
    });
    export_obj(result.mesh, (dir / "base.obj").string());
    write_png((dir / "renders.png").string(), tile_images(render_stage1(result, views, Lighting{}, render), 4));
    save_tables({{"texture", realize_texture(result.texture)}}, (dir / "texture.bin").string());
    runs.push_back(std::move(result));
  }
  const std::size_t best = select_best_run(runs);
  std::vector<std::size_t> order(runs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return runs[x].final_rec < runs[y].final_rec; });
  std::ofstream ranking = open_out(fs::path(a.out) / "ranking.tsv");
  ranking << "rank\tseed\tfinal_rec\n";
  for (std::size_t k = 0; k < order.size(); ++k) {
    ranking << k + 1 << '\t' << rc.stage1.seed + order[k] << '\t' << fmt(runs[order[k]].final_rec) << '\n';
  }
  const fs::path chosen = fs::path(a.out) / ("seed_" + std::to_string(rc.stage1.seed + best));
  for (const char* name : {"base.obj", "renders.png", "texture.bin"}) {
    fs::copy_file(chosen / name, fs::path(a.out) / name, fs::copy_options::overwrite_existing);
  }
  std::cout << "selected seed " << rc.stage1.seed + best << " final_rec " << fmt(runs[best].final_rec) << "\n";
}

struct RemeshArgs {
  std::string in, config, out;
};

void run_remesh(const RemeshArgs& a, const Globals& g) {
  const RunConfig rc = load_run_config(a.config, g);
  const RemeshResult r = postprocess_remesh(import_obj(a.in), rc.remesh);
  export_obj(r.mesh, a.out);
  std::cout << "iou " << fmt(r.iou) << " cv_before " << fmt(r.cv_before) << " cv_after " << fmt(r.cv_after) << "\n";
  if (r.warning) std::cerr << "warning: silhouette IoU " << r.iou << " is below the target " << rc.remesh.iou_target << "\n";
}

struct TrainArgs {
  std::string config, base, data, out, init_texture;
  bool resume = false;
};

void run_train(const TrainArgs& a, const Globals& g) {
  require(fs::is_regular_file(a.base), "E_NO_BASE", "base mesh '" + a.base + "' does not exist");
  RunConfig rc = load_run_config(a.config, g);
  const Dataset data = load_dataset(a.data);
  rc.kv.set("data.dir", fs::absolute(a.data).string());
  rc.kv.set("data.height", std::to_string(data.height()));
  rc.kv.set("data.width", std::to_string(data.width()));
  Stage2Model model;
  std::size_t remaining = rc.stage2.iterations;
  if (a.resume && fs::exists(fs::path(a.out) / "tables.bin")) {
    model = load_checkpoint(a.out);
    require(model.ids.size() == data.size(), "E_ARG", "checkpoint does not match the dataset");
    const auto done = static_cast<std::size_t>(model.iteration);
    remaining = done >= remaining ? 0 : remaining - done;
  } else {
    std::optional<ad::Array> texture;
    if (!a.init_texture.empty()) texture = table_entry(load_tables(a.init_texture), "texture");
    model = init_stage2(data, import_obj(a.base), rc.stage2, texture);
  }
  fs::create_directories(a.out);
  RenderConfig render = rc.stage2.render;
  render.height = data.height();
  render.width = data.width();
  std::ofstream log(fs::path(a.out) / "loss.tsv", a.resume ? std::ios::app : std::ios::trunc);
  require(static_cast<bool>(log), "E_IO", "cannot write the loss log");
  if (!a.resume || model.iteration == 0) log << "iteration\ttotal\trec\tmae\ttv\teligible\tskipped\n";
  Stage2Config cfg = rc.stage2;
  cfg.iterations = remaining;
  if (remaining > 0) {
    train_full(data, model, cfg, [&](std::size_t it, const Stage2Iteration& s, const Stage2Model& m) {
      log << it << '\t' << fmt(s.total) << '\t' << fmt(s.rec) << '\t' << fmt(s.mae) << '\t' << fmt(s.tv) << '\t'
          << s.eligible << '\t' << (s.skipped ? 1 : 0) << '\n';
      if (s.skipped) std::cerr << "warning: iteration " << it << " skipped, non-finite loss\n";
      if (g.verbose && it % rc.log_every == 0) {
        std::cerr << "iteration " << it << " total " << s.total << " rec " << s.rec << " eligible " << s.eligible << "\n";
      }
      if (rc.render_every > 0 && (it + 1) % rc.render_every == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "renders_%05zu.png", it + 1);
        write_png((fs::path(a.out) / name).string(), render_grid(m, render, 8));
        save_checkpoint(m, rc.kv, a.out);
      }
    });
  }
  save_checkpoint(model, rc.kv, a.out);
  write_png((fs::path(a.out) / "renders_final.png").string(), render_grid(model, render, 8));
  std::cout << "trained to iteration " << model.iteration << "\n";
}

struct FinetuneArgs {
  std::string checkpoint, image, out;
};

void run_finetune(const FinetuneArgs& a, const Globals& g) {
  const Checkpoint c = open_checkpoint(a.checkpoint, g);
  const ad::Array image = read_image(a.image);
  require(image.shape()[0] == c.render.height && image.shape()[1] == c.render.width, "E_SHAPE",
          "image size differs from the training data");
  const InstanceParams start = initial_guess(image, c.model, c.rc.stage2);
  const FinetuneResult r = finetune_instance(image, c.model, start, c.rc.stage2, c.rc.finetune);
  fs::create_directories(a.out);
  write_png((fs::path(a.out) / "before.png").string(),
            render_instance(c.model, start, start.shape, start.pose, c.render));
  write_png((fs::path(a.out) / "after.png").string(),
            render_instance(c.model, r.params, r.params.shape, r.params.pose, c.render));
  write_params(r.params, (fs::path(a.out) / "params.bin").string());
  std::ofstream losses = open_out(fs::path(a.out) / "losses.tsv");
  const char* phases[] = {"initial", "background", "pose", "shape"};
  for (std::size_t k = 0; k < 4; ++k) losses << phases[k] << '\t' << fmt(r.losses[k]) << '\n';
  std::cout << "photometric " << fmt(r.losses[0]) << " -> " << fmt(r.losses[3]) << "\n";
}

struct ViewArgs {
  std::string checkpoint, id, out;
  double step = 50.0;
};

void run_reconstruct(const ViewArgs& a, const Globals& g) {
  const Checkpoint c = open_checkpoint(a.checkpoint, g);
  const std::size_t i = find_instance(c.model, a.id);
  const InstanceParams p = best_params(c.model, i);
  fs::create_directories(a.out);
  if (!c.rc.data_dir.empty() && fs::exists(c.rc.data_dir)) {
    const Dataset data = load_dataset(c.rc.data_dir);
    for (const Instance& item : data.items) {
      if (item.id == a.id) write_png((fs::path(a.out) / "input.png").string(), item.image);
    }
  }
  write_png((fs::path(a.out) / "reconstruction.png").string(), render_instance(c.model, p, p.shape, p.pose, c.render));
  PoseParams novel = p.pose;
  novel.azimuth += 90.0;
  write_png((fs::path(a.out) / "novel.png").string(), render_instance(c.model, p, p.shape, novel, c.render));
}

void run_turntable(const ViewArgs& a, const Globals& g) {
  const Checkpoint c = open_checkpoint(a.checkpoint, g);
  const InstanceParams p = best_params(c.model, find_instance(c.model, a.id));
  fs::create_directories(a.out);
  std::size_t k = 0;
  for (PoseParams pose : turntable_poses(p.pose.azimuth, p.pose.elevation, a.step)) {
    pose.inplane = p.pose.inplane;
    char name[32];
    std::snprintf(name, sizeof(name), "turn_%03zu.png", k++);
    write_png((fs::path(a.out) / name).string(), render_instance(c.model, p, p.shape, pose, c.render));
  }
  std::cout << "wrote " << k << " images\n";
}

struct EvalArgs {
  std::string checkpoint, truth, out;
};

void run_eval_pose(const EvalArgs& a, const Globals& g) {
  const Stage2Model model = load_checkpoint(a.checkpoint);
  (void)g;
  std::vector<NamedPose> predicted;
  for (std::size_t i = 0; i < model.ids.size(); ++i) predicted.push_back({model.ids[i], best_params(model, i).pose});
  const PoseEvalResult r = eval_pose(predicted, load_poses(a.truth));
  std::ostringstream report;
  report << "id\terror\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i) report << r.ids[i] << '\t' << fmt(r.errors[i]) << '\n';
  report << "acc_pi_6\t" << fmt(r.accuracy) << '\n';
  if (!a.out.empty()) open_out(a.out) << report.str();
  std::cout << "acc_pi_6 " << fmt(r.accuracy) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised single-view 3D reconstruction by render-and-compare"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed; overrides the config file");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads; overrides the config file")
                          ->check(CLI::PositiveNumber);
  app.add_flag("--verbose,-v", g.verbose, "Progress on stderr");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Render a synthetic dataset from a mesh");
  c_synth->add_option("--mesh", synth.mesh, "Ground-truth OBJ")->required()->check(CLI::ExistingFile);
  c_synth->add_option("--views", synth.views, "Number of views");
  c_synth->add_option("--dist", synth.dist, "Viewpoint distribution: car, horse, aeroplane, chair");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--size", synth.size, "Image side in pixels");
  c_synth->add_option("--texture-patch", synth.patch, "Texels per face patch side");
  c_synth->add_option("--front", synth.front, "Color for z > 0 as r,g,b");
  c_synth->add_option("--back", synth.back, "Color for z <= 0 as r,g,b");
  c_synth->add_flag("--no-light", synth.no_light, "Ambient light only");

  LearnBaseArgs learn;
  auto* c_learn = app.add_subcommand("learn-base", "Stage 1: learn the category base shape");
  c_learn->add_option("--config", learn.config, "Run config")->check(CLI::ExistingFile);
  c_learn->add_option("--data", learn.data, "Dataset directory")->required();
  c_learn->add_option("--out", learn.out, "Output directory")->required();
  c_learn->add_option("--seeds", learn.seeds, "Independent runs; the lowest final L_rec is selected");

  RemeshArgs remesh;
  auto* c_remesh = app.add_subcommand("remesh", "Refit an icosphere to a base shape");
  c_remesh->add_option("--in", remesh.in, "Input OBJ")->required()->check(CLI::ExistingFile);
  c_remesh->add_option("--config", remesh.config, "Run config")->check(CLI::ExistingFile);
  c_remesh->add_option("--out", remesh.out, "Output OBJ")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Stage 2: per-instance shape, pose, texture and background");
  c_train->add_option("--config", train.config, "Run config")->check(CLI::ExistingFile);
  c_train->add_option("--base", train.base, "Base OBJ")->required();
  c_train->add_option("--data", train.data, "Dataset directory")->required();
  c_train->add_option("--out", train.out, "Checkpoint directory")->required();
  c_train->add_option("--init-texture", train.init_texture, "Table file with a 'texture' entry")
      ->check(CLI::ExistingFile);
  c_train->add_flag("--resume", train.resume, "Continue from the checkpoint in --out");

  FinetuneArgs finetune;
  auto* c_finetune = app.add_subcommand("finetune", "Refine the reconstruction of one image");
  c_finetune->add_option("--checkpoint", finetune.checkpoint, "Checkpoint directory")->required();
  c_finetune->add_option("--image", finetune.image, "Input image")->required()->check(CLI::ExistingFile);
  c_finetune->add_option("--out", finetune.out, "Output directory")->required();

  ViewArgs recon;
  auto* c_recon = app.add_subcommand("reconstruct", "Input, reconstruction and a novel view of one instance");
  c_recon->add_option("--checkpoint", recon.checkpoint, "Checkpoint directory")->required();
  c_recon->add_option("--id", recon.id, "Instance id")->required();
  c_recon->add_option("--out", recon.out, "Output directory")->required();

  ViewArgs turn;
  auto* c_turn = app.add_subcommand("turntable", "Renders at fixed azimuth steps");
  c_turn->add_option("--checkpoint", turn.checkpoint, "Checkpoint directory")->required();
  c_turn->add_option("--id", turn.id, "Instance id")->required();
  c_turn->add_option("--step", turn.step, "Azimuth step in degrees");
  c_turn->add_option("--out", turn.out, "Output directory")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval-pose", "acc_pi/6 of recorded poses against ground truth");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
  c_eval->add_option("--truth", eval.truth, "Pose file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", eval.out, "Report file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error E_USAGE: " << e.what() << "\n";
    return 2;
  }
  if (*seed_opt) g.seed = seed;
  if (*threads_opt) g.threads = threads;

  try {
    if (*c_synth) run_synth(synth, g);
    if (*c_learn) run_learn_base(learn, g);
    if (*c_remesh) run_remesh(remesh, g);
    if (*c_train) run_train(train, g);
    if (*c_finetune) run_finetune(finetune, g);
    if (*c_recon) run_reconstruct(recon, g);
    if (*c_turn) run_turntable(turn, g);
    if (*c_eval) run_eval_pose(eval, g);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
