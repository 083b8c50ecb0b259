#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "evcog/errors.hpp"

namespace evcog {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay: p <- p*(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps).
// Decay applies to every parameter.
template <typename T>
class AdamW {
 public:
  AdamW(std::size_t n, AdamWConfig config) : config_(config), m_(n, T(0)), v_(n, T(0)) {}

  void step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw DimensionError("AdamW: parameter/gradient size mismatch");
    }
    ++steps_;
    const double lr = config_.learning_rate;
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T bias1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(steps_)));
    const T bias2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(steps_)));
    const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);
    const T step = static_cast<T>(lr);
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grads[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
      const T m_hat = m_[i] / bias1;
      const T v_hat = v_[i] / bias2;
      params[i] = params[i] * decay - step * m_hat / (std::sqrt(v_hat) + eps);
    }
  }

  std::size_t steps() const noexcept { return steps_; }
  const AdamWConfig& config() const noexcept { return config_; }

 private:
  AdamWConfig config_;
  std::vector<T> m_;
  std::vector<T> v_;
  std::size_t steps_ = 0;
};

}  // namespace evcog
