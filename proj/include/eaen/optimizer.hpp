#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eaen/tensor.hpp"

namespace eaen {

// init_lr * 0.5^floor(iteration / decay_every)
double lr_at(std::size_t iteration, double init_lr, std::size_t decay_every);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One bias-corrected Adam update of every parameter from its .grad.
  void step(const std::vector<ParamRef>& params, double lr);

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

  // Moment tensors keyed by parameter name, for checkpointing.
  std::map<std::string, Tensor>& first_moments() noexcept { return m_; }
  std::map<std::string, Tensor>& second_moments() noexcept { return v_; }
  void set_steps(std::uint64_t s) noexcept { steps_ = s; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace eaen
