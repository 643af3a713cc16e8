#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ss3d/appearance/background.hpp"
#include "ss3d/appearance/texture.hpp"
#include "ss3d/deform/deformation.hpp"
#include "ss3d/explore/explorer.hpp"
#include "ss3d/io/config.hpp"
#include "ss3d/io/dataset.hpp"
#include "ss3d/losses/losses.hpp"
#include "ss3d/render/renderer.hpp"
#include "ss3d/train/adam.hpp"

namespace ss3d {

struct Stage2Config {
  std::string category = "car";
  std::size_t iterations = 300;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool curriculum = true;

  std::size_t texture_patch = 4;
  std::size_t background_rows = 8;
  RenderConfig render;  // height and width follow the dataset
  std::string extractor = "pyramid";
  std::size_t feature_levels = 3;
  LossConfig loss;
  /// View prior learning is not implemented; any non-zero weight is rejected.
  double w_vpl = 0.0;
  ExploreConfig explore;
  CropMode crop;

  AdamConfig adam;
  double lr_shape = 1e-2;
  double lr_pose = 1e-2;
  double lr_texture = 5e-2;
  double lr_background = 5e-2;

  static Stage2Config for_category(const std::string& category);
  /// Reads `stage2.*`, `explore.*` and shared keys over for_category defaults.
  static Stage2Config from_config(const KeyValueConfig& kv);
  void validate() const;
};

/// Per-instance parameter tables standing in for the encoders' outputs.
struct InstanceParams {
  FFDGrid shape;
  PoseParams pose;
  ad::Array texture;  // T x T x 3 logits
  StripeBackground background;
};

struct Stage2Model {
  TriangleMesh base;  // carries the atlas texture coordinates
  TextureAtlas atlas;
  std::vector<std::string> ids;
  std::vector<InstanceParams> instances;
  std::vector<BestRecord> records;
  std::int64_t iteration = 0;  // completed iterations
};

struct Stage2Iteration {
  double total = 0.0;
  double rec = 0.0;
  double mae = 0.0;
  double tv = 0.0;
  std::size_t eligible = 0;
  bool skipped = false;
};

using Stage2Progress = std::function<void(std::size_t iteration, const Stage2Iteration&, const Stage2Model&)>;

/// Initial tables: zero deformation, azimuth 0 at the prior's mid elevation,
/// texture from `init_texture` (T x T x 3 colors, gray when absent) and a
/// background fitted to the image's left and right columns. Records start empty.
Stage2Model init_stage2(const Dataset& dataset, const TriangleMesh& base, const Stage2Config& cfg,
                        const std::optional<ad::Array>& init_texture = std::nullopt);

/// Runs cfg.iterations further iterations on `model`. Iteration i draws a batch
/// from the first min(i + 1, N) instances (all N without curriculum), explores
/// pose then shape per member, and takes one Adam step on
/// w_rec (photometric + feature matching) + w_mae record matching + w_tv TV.
/// Batches with a non-finite loss are skipped and marked in the history.
std::vector<Stage2Iteration> train_full(const Dataset& dataset, Stage2Model& model, const Stage2Config& cfg,
                                        const Stage2Progress& progress = {});

/// Number of instances eligible at iteration i (0-based).
std::size_t curriculum_size(std::size_t iteration, std::size_t dataset_size, bool curriculum);

/// Renders instance parameters with an explicit shape and pose (no directional light).
ad::Array render_instance(const Stage2Model& model, const InstanceParams& params, const FFDGrid& shape,
                          const PoseParams& pose, const RenderConfig& render);

/// Photometric loss of params (shape and pose taken from params) against an image.
double instance_loss(const Stage2Model& model, const InstanceParams& params, const ad::Array& image,
                     const Stage2Config& cfg);

struct FinetuneConfig {
  std::size_t steps_per_phase = 30;
  double lr_background = 5e-2;
  double lr_pose = 5e-3;
  double lr_shape = 5e-3;
  AdamConfig adam;

  static FinetuneConfig from_config(const KeyValueConfig& kv);
  void validate() const;
};

struct FinetuneResult {
  InstanceParams params;
  /// Loss before fine-tuning and after the background, pose and shape phases.
  std::array<double, 4> losses{};
};

/// Successive Adam phases over background, pose and shape, each retaining its
/// best iterate so no phase increases the photometric loss.
FinetuneResult finetune_instance(const ad::Array& image, const Stage2Model& model, const InstanceParams& start,
                                 const Stage2Config& cfg, const FinetuneConfig& ft);

/// Starting point for an unseen image: the training instance (with its best
/// shape and pose) whose render matches the image best, with the background refit.
InstanceParams initial_guess(const ad::Array& image, const Stage2Model& model, const Stage2Config& cfg);

/// Instance tables with the best recorded shape and pose in place of the estimates.
InstanceParams best_params(const Stage2Model& model, std::size_t index);

/// Checkpoint directory: config.txt, base.obj, tables.bin, records.bin, ids.txt.
void save_checkpoint(const Stage2Model& model, const KeyValueConfig& config, const std::string& directory);
/// Throws E_IO for a missing directory and E_PARSE for inconsistent contents.
Stage2Model load_checkpoint(const std::string& directory);

}  // namespace ss3d
