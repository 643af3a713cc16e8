#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ss3d/autodiff/ops.hpp"

namespace ss3d {

class FeatureExtractor;

/// Feature maps N_b x H x W x N_c (channels last), one array per level.
struct FeatureBatch {
  std::vector<ad::Var> levels;

  std::size_t batch() const { return levels.empty() ? 0 : levels.front().shape()[0]; }
};

/// Weights of the reconstruction loss and of the stage-2 objective.
struct LossConfig {
  double lambda_rec = 0.9;
  /// Per pyramid level; empty means weight 1 for every level.
  std::vector<double> level_weights;
  double w_rec = 1.0;
  double w_mae = 1.0;
  double w_tv = 0.1;

  double level_weight(std::size_t level) const;
  /// Throws E_CONFIG unless lambda_rec is in [0, 1] and all weights are finite and non-negative.
  void validate() const;
};

/// lambda_rec for "cifar-car", "cifar-horse", "pascal-aeroplane", "pascal-car",
/// "pascal-chair"; E_ARG otherwise.
double lambda_rec_for(const std::string& dataset);

/// (1 / HW) sum over pixels of the channel-wise Euclidean distance between two
/// H x W x C maps. The norm has zero gradient where the maps agree.
ad::Var feature_distance(ad::Var a, ad::Var b);

/// (N x M) matrix of feature_distance between every f_i and g_j, for
/// (N x H x W x C) and (M x H x W x C) batches.
ad::Var pairwise_feature_distances(ad::Var f, ad::Var g);

/// feature_distance between the batch means.
ad::Var feature_matching(ad::Var f, ad::Var g);

/// (1 / N) (sum_i min_j D(f_i, g_j) + sum_j min_i D(g_j, f_i)), N the size of f.
ad::Var chamfer(ad::Var f, ad::Var g);

/// sum over levels of w_l (lambda chamfer + (1 - lambda) feature_matching).
ad::Var rec_loss(const FeatureBatch& f, const FeatureBatch& g, const LossConfig& cfg);

/// sum over levels of w_l feature_distance between the features of two H x W x 3 images.
ad::Var photometric_loss(ad::Var rendered, ad::Var target, const FeatureExtractor& extractor,
                         const LossConfig& cfg = {});

}  // namespace ss3d
