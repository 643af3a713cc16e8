#pragma once

#include <cstddef>
#include <cstdint>

#include "ss3d/autodiff/array.hpp"

namespace ss3d {

struct AdamConfig {
  double alpha = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  double epsilon = 1e-8;

  /// Throws E_CONFIG unless alpha >= 0, betas in [0, 1) and epsilon > 0.
  void validate() const;
};

/// Moments and step counter for one parameter array.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const AdamConfig& cfg, const ad::Shape& shape);

  /// One bias-corrected update of `params` in place. Throws E_SHAPE on mismatch.
  void step(ad::Array& params, const ad::Array& grad);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  const ad::Array& first_moment() const { return m_; }
  const ad::Array& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  ad::Array m_;
  ad::Array v_;
  std::int64_t steps_ = 0;
};

}  // namespace ss3d
