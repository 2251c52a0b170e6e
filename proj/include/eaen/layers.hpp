#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eaen/kernels.hpp"
#include "eaen/rng.hpp"
#include "eaen/tensor.hpp"

namespace eaen {

enum class Mode { kTrain, kEval };

// 2-D convolution, stride 1, "same" padding, no bias (a batch norm follows).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);

  // He-uniform initialisation.
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t kernel() const noexcept { return kernel_; }
  std::size_t parameter_count() const noexcept { return weight_.value.size(); }

 private:
  kernels::ConvShape shape_for(const Tensor& x) const;

  std::size_t in_ = 0, out_ = 0, kernel_ = 3;
  Parameter weight_;
  Tensor input_;
};

// Per-channel batch normalisation. Train mode normalises with batch
// statistics and updates the running estimates; eval mode uses the stored
// running estimates.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out);

  std::size_t parameter_count() const noexcept { return gamma_.value.size() * 2; }

 private:
  std::size_t channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  // forward caches
  Mode mode_ = Mode::kEval;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

class MaxPool2x2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  kernels::PoolShape shape_;
  std::vector<std::uint32_t> argmax_;
};

// ReLU when slope == 0, LeakyReLU otherwise.
class Rectifier {
 public:
  explicit Rectifier(double slope = 0.0) : slope_(slope) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  double slope_;
  Tensor input_;
};

}  // namespace eaen
