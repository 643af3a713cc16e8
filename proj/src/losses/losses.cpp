#include "ss3d/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ss3d/common/error.hpp"
#include "ss3d/losses/features.hpp"

namespace ss3d {
namespace {

void require_maps(const ad::Shape& f, const ad::Shape& g) {
  require(f.size() == 4 && g.size() == 4, "E_SHAPE", "feature batches must be N x H x W x C");
  require(f[1] == g[1] && f[2] == g[2] && f[3] == g[3], "E_SHAPE", "feature maps differ in shape");
}

// Mean over axis 0 that sums each element's values in sorted order, so any
// permutation of the batch gives a bit-identical result.
ad::Var batch_mean(ad::Var f) {
  const ad::Shape& s = f.shape();
  const std::size_t n = s[0];
  const std::size_t stride = f.size() / n;
  ad::Shape out_shape(s.begin() + 1, s.end());
  ad::Array out(out_shape);
  std::vector<double> column(n);
  for (std::size_t k = 0; k < stride; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = f.value()[i * stride + k];
    std::sort(column.begin(), column.end());
    double total = 0.0;
    for (double v : column) total += v;
    out[k] = total / static_cast<double>(n);
  }
  return f.tape()->record(std::move(out), {f}, [n, stride](const ad::Array&, const ad::Array& g, ad::ParentGrads pg) {
    ad::Array& gf = *pg[0];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < stride; ++k) gf[i * stride + k] += g[k] / static_cast<double>(n);
    }
  });
}

}  // namespace

double LossConfig::level_weight(std::size_t level) const {
  if (level_weights.empty()) return 1.0;
  require(level < level_weights.size(), "E_CONFIG", "no weight for pyramid level " + std::to_string(level));
  return level_weights[level];
}

void LossConfig::validate() const {
  require(std::isfinite(lambda_rec) && lambda_rec >= 0.0 && lambda_rec <= 1.0, "E_CONFIG",
          "lambda_rec must be in [0, 1]");
  auto ok = [](double w) { return std::isfinite(w) && w >= 0.0; };
  for (double w : level_weights) require(ok(w), "E_CONFIG", "level weights must be finite and non-negative");
  require(ok(w_rec) && ok(w_mae) && ok(w_tv), "E_CONFIG", "loss weights must be finite and non-negative");
}

double lambda_rec_for(const std::string& dataset) {
  static const std::map<std::string, double> table{
      {"cifar-car", 0.9}, {"cifar-horse", 0.3}, {"pascal-aeroplane", 0.3}, {"pascal-car", 0.9}, {"pascal-chair", 0.8}};
  const auto it = table.find(dataset);
  if (it == table.end()) fail("E_ARG", "no lambda_rec for dataset '" + dataset + "'");
  return it->second;
}

ad::Var pairwise_feature_distances(ad::Var f, ad::Var g) {
  require_maps(f.shape(), g.shape());
  const std::size_t n = f.shape()[0], m = g.shape()[0];
  const std::size_t pixels = f.shape()[1] * f.shape()[2], channels = f.shape()[3];
  const std::size_t stride = pixels * channels;
  const double scale = 1.0 / static_cast<double>(pixels);
  const ad::Array& fv = f.value();
  const ad::Array& gv = g.value();
  ad::Array out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double* a = fv.data().data() + i * stride;
      const double* b = gv.data().data() + j * stride;
      double total = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        double sq = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const double d = a[p * channels + c] - b[p * channels + c];
          sq += d * d;
        }
        total += std::sqrt(sq);
      }
      out[i * m + j] = total * scale;
    }
  }
  // Tape values live in stable storage for the lifetime of the tape.
  const ad::Array* fp = &fv;
  const ad::Array* gp = &gv;
  return f.tape()->record(std::move(out), {f, g},
                          [fp, gp, n, m, pixels, channels, stride, scale](const ad::Array&, const ad::Array& grad,
                                                                          ad::ParentGrads pg) {
    ad::Array* gf = pg[0];
    ad::Array* gg = pg[1];
    std::vector<double> r(channels);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double w = grad[i * m + j] * scale;
        if (w == 0.0) continue;
        const double* a = fp->data().data() + i * stride;
        const double* b = gp->data().data() + j * stride;
        for (std::size_t p = 0; p < pixels; ++p) {
          double sq = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            r[c] = a[p * channels + c] - b[p * channels + c];
            sq += r[c] * r[c];
          }
          if (sq == 0.0) continue;
          const double k = w / std::sqrt(sq);
          for (std::size_t c = 0; c < channels; ++c) {
            if (gf) (*gf)[i * stride + p * channels + c] += k * r[c];
            if (gg) (*gg)[j * stride + p * channels + c] -= k * r[c];
          }
        }
      }
    }
  });
}

ad::Var feature_distance(ad::Var a, ad::Var b) {
  require(a.shape() == b.shape(), "E_SHAPE", "feature maps differ in shape");
  require(a.shape().size() == 3, "E_SHAPE", "feature maps must be H x W x C");
  const ad::Shape& s = a.shape();
  const ad::Var d = pairwise_feature_distances(ad::reshape(a, {1, s[0], s[1], s[2]}), ad::reshape(b, {1, s[0], s[1], s[2]}));
  return ad::reshape(d, {});
}

ad::Var feature_matching(ad::Var f, ad::Var g) {
  require_maps(f.shape(), g.shape());
  require(f.shape()[0] > 0 && g.shape()[0] > 0, "E_SHAPE", "empty feature batch");
  return feature_distance(batch_mean(f), batch_mean(g));
}

ad::Var chamfer(ad::Var f, ad::Var g) {
  require_maps(f.shape(), g.shape());
  require(f.shape()[0] > 0 && g.shape()[0] > 0, "E_SHAPE", "empty feature batch");
  const ad::Var d = pairwise_feature_distances(f, g);
  return (ad::sum(ad::min_axis(d, 1)) + ad::sum(ad::min_axis(d, 0))) / static_cast<double>(f.shape()[0]);
}

ad::Var rec_loss(const FeatureBatch& f, const FeatureBatch& g, const LossConfig& cfg) {
  cfg.validate();
  require(!f.levels.empty() && f.levels.size() == g.levels.size(), "E_SHAPE", "feature level counts differ");
  ad::Var total = f.levels.front().tape()->constant(0.0);
  for (std::size_t l = 0; l < f.levels.size(); ++l) {
    const double w = cfg.level_weight(l);
    if (w == 0.0) continue;
    ad::Var level = cfg.lambda_rec * chamfer(f.levels[l], g.levels[l]) +
                    (1.0 - cfg.lambda_rec) * feature_matching(f.levels[l], g.levels[l]);
    total = total + w * level;
  }
  return total;
}

ad::Var photometric_loss(ad::Var rendered, ad::Var target, const FeatureExtractor& extractor, const LossConfig& cfg) {
  require(rendered.shape() == target.shape(), "E_SHAPE", "rendered and target images differ in shape");
  require(rendered.shape().size() == 3, "E_SHAPE", "images must be H x W x 3");
  const ad::Shape& s = rendered.shape();
  const FeatureBatch a = extractor.extract(ad::reshape(rendered, {1, s[0], s[1], s[2]}));
  const FeatureBatch b = extractor.extract(ad::reshape(target, {1, s[0], s[1], s[2]}));
  ad::Var total = rendered.tape()->constant(0.0);
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    const double w = cfg.level_weight(l);
    if (w == 0.0) continue;
    total = total + w * ad::reshape(pairwise_feature_distances(a.levels[l], b.levels[l]), {});
  }
  return total;
}

}  // namespace ss3d
