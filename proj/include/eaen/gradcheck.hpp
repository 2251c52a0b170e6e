#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eaen/tensor.hpp"

namespace eaen {

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Entries probed per tensor (0: all of them), sampled without replacement.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 11;
  // Scales every analytic gradient entry by (1 + perturb). A non-zero value
  // is a negative control that the checker must reject.
  double perturb = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

// `loss` evaluates the scalar objective at the current parameter values.
// `backward` zeroes and refills every parameter gradient.
GradCheckResult check_gradients(const std::vector<ParamRef>& params,
                                const std::function<double()>& loss,
                                const std::function<void()>& backward,
                                const GradCheckOptions& options = {});

enum class GradComponent { kAdapter, kAdapterProto, kConvBlock, kResidualBlock, kTpn, kPipeline };

std::string to_string(GradComponent c);
GradComponent parse_grad_component(const std::string& s);
std::vector<GradComponent> all_grad_components();

// Builds a small random instance of `component` and checks it end to end,
// including the gradient with respect to the component's input.
GradCheckResult check_component(GradComponent component, const GradCheckOptions& options = {});

}  // namespace eaen
