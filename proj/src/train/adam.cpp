#include "ss3d/train/adam.hpp"

#include <cmath>

#include "ss3d/common/error.hpp"

namespace ss3d {

void AdamConfig::validate() const {
  require(std::isfinite(alpha) && alpha >= 0.0, "E_CONFIG", "Adam alpha must be finite and non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "E_CONFIG", "Adam betas must be in [0, 1)");
  require(std::isfinite(epsilon) && epsilon > 0.0, "E_CONFIG", "Adam epsilon must be positive");
}

AdamState::AdamState(const AdamConfig& cfg, const ad::Shape& shape) : cfg_(cfg), m_(shape), v_(shape) {
  cfg.validate();
}

void AdamState::step(ad::Array& params, const ad::Array& grad) {
  require(params.shape() == m_.shape() && grad.shape() == m_.shape(), "E_SHAPE",
          "Adam parameters and gradient must match the state shape");
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    params[i] -= cfg_.alpha * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
  }
}

}  // namespace ss3d
