#include "eaen/optimizer.hpp"

#include <cmath>

namespace eaen {

double lr_at(std::size_t iteration, double init_lr, std::size_t decay_every) {
  if (decay_every == 0) throw ConfigError("decay_every must be positive");
  return init_lr * std::pow(0.5, static_cast<double>(iteration / decay_every));
}

void Adam::step(const std::vector<ParamRef>& params, double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& ref : params) {
    Tensor& value = ref.param->value;
    const Tensor& grad = ref.param->grad;
    auto [mit, m_new] = m_.try_emplace(ref.name, value.shape());
    auto [vit, v_new] = v_.try_emplace(ref.name, value.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!m.same_shape(value) || !v.same_shape(value)) {
      throw ContractError("optimizer state for " + ref.name + " has the wrong shape");
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace eaen
