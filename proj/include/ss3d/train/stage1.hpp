#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ss3d/appearance/background.hpp"
#include "ss3d/appearance/texture.hpp"
#include "ss3d/deform/deformation.hpp"
#include "ss3d/io/config.hpp"
#include "ss3d/io/dataset.hpp"
#include "ss3d/losses/losses.hpp"
#include "ss3d/mesh/smoothness.hpp"
#include "ss3d/render/renderer.hpp"
#include "ss3d/train/adam.hpp"

namespace ss3d {

struct Stage1Config {
  std::string category = "car";
  CategoryDims dims;
  ViewpointDist viewpoints;
  std::size_t num_colors = 4;
  double lambda_rec = 0.9;
  SmoothnessConfig smoothness;

  std::size_t batch_size = 64;
  std::size_t iterations = 1200;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  int subdivisions = 2;
  std::size_t texture_patch = 4;
  std::size_t background_rows = 8;
  RenderConfig render;  // height and width follow the dataset
  LightRanges lights;
  std::string extractor = "pyramid";
  std::size_t feature_levels = 3;

  AdamConfig adam;
  double lr_shape = 3e-3;
  double lr_texture = 3e-2;
  double lr_background = 3e-2;

  /// Directory for the diagnostic dump written before a non-finite loss aborts; empty disables it.
  std::string dump_dir;

  /// Category table values for dims, viewpoints and N_c, with shipped defaults elsewhere.
  static Stage1Config for_category(const std::string& category);
  /// Reads `stage1.*` keys (and `category`, `seed`, `threads`) over for_category defaults.
  static Stage1Config from_config(const KeyValueConfig& kv);
  /// Throws E_CONFIG unless iterations > 0, batch_size >= 2 and every nested config is valid.
  void validate() const;
};

struct Stage1Iteration {
  double total = 0.0;
  double rec = 0.0;
  double smooth = 0.0;
};

struct Stage1Result {
  TriangleMesh mesh;  // unit-cube fit, with atlas texture coordinates
  TextureAtlas atlas;
  TextureSpec texture;
  StripeBackground background;
  ad::Array offsets;  // free symmetric offsets
  std::vector<Stage1Iteration> history;
  /// L_rec of the final parameters on a fixed evaluation batch shared by all seeds.
  double final_rec = 0.0;
};

using Stage1Progress = std::function<void(std::size_t iteration, const Stage1Iteration&)>;

/// Learns one shared shape, few-color texture and stripe background whose renders
/// under prior viewpoints and random lights match the dataset in distribution
/// (L_rec + L_s, Adam). Throws E_ARG for an empty dataset and E_NONFINITE
/// when the loss stops being finite.
Stage1Result learn_base_shape(const Dataset& dataset, const Stage1Config& cfg, const Stage1Progress& progress = {});

/// Renders of a stage-1 result under the given poses and light.
std::vector<ad::Array> render_stage1(const Stage1Result& result, const std::vector<PoseParams>& poses,
                                     const Lighting& light, const RenderConfig& render);

/// L_rec between the dataset and renders of `mesh`/`texture`/`background` on the
/// evaluation batch.
double evaluate_stage1(const Dataset& dataset, const Stage1Result& result, const Stage1Config& cfg);

/// Index of the lowest final_rec; ties keep the earlier run. Throws E_ARG when empty.
std::size_t select_best_run(const std::vector<Stage1Result>& runs);

}  // namespace ss3d
