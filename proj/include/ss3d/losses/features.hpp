#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <string>

#include "ss3d/losses/losses.hpp"

namespace ss3d {

/// Differentiable map from an N x H x W x 3 image batch to feature levels.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual FeatureBatch extract(ad::Var images) const = 0;
};

/// Identity: one level equal to the images.
class PixelExtractor final : public FeatureExtractor {
 public:
  std::string id() const override { return "pixels"; }
  FeatureBatch extract(ad::Var images) const override;
};

/// Gaussian pyramid: level 0 is the input, level l + 1 is level l blurred by the
/// separable [1 2 1] / 4 kernel (edge replication) and decimated 2x.
class PyramidExtractor final : public FeatureExtractor {
 public:
  explicit PyramidExtractor(std::size_t levels = 3);
  std::string id() const override { return "pyramid"; }
  FeatureBatch extract(ad::Var images) const override;
  std::size_t levels() const { return levels_; }

 private:
  std::size_t levels_;
};

/// "pixels" or "pyramid"; E_ARG for other ids.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& id, std::size_t levels = 3);

/// One pyramid step on an N x H x W x C batch: blur then keep even rows and
/// columns, giving ceil(H / 2) x ceil(W / 2).
ad::Var blur_decimate(ad::Var images);

/// External feature file: magic "SS3F", u32 rank, rank u32 dims, then float32
/// payload in row-major order; all little-endian.
void write_features(std::ostream& out, const ad::Array& features);
ad::Array read_features(std::istream& in);
void save_features(const ad::Array& features, const std::string& path);
ad::Array load_features(const std::string& path);

}  // namespace ss3d
