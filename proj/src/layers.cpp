#include "eaen/layers.hpp"

#include <cmath>

namespace eaen {

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      weight_({out_channels, in_channels, kernel, kernel}) {}

void Conv2d::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in_ * kernel_ * kernel_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : weight_.value.values()) w = dist(rng);
}

kernels::ConvShape Conv2d::shape_for(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_) {
    throw ContractError("conv2d expects NCHW input with " + std::to_string(in_) +
                        " channels, got " + x.shape_string());
  }
  return {x.dim(0), in_, x.dim(2), x.dim(3), out_, kernel_};
}

Tensor Conv2d::forward(const Tensor& x) {
  const auto s = shape_for(x);
  input_ = x;
  Tensor y({s.batch, out_, s.height, s.width});
  kernels::parallel::conv2d_forward(s, x.data(), weight_.value.data(), y.data());
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const auto s = shape_for(input_);
  Tensor dx(input_.shape());
  kernels::parallel::conv2d_backward(s, input_.data(), weight_.value.data(), dy.data(),
                                     dx.data(), weight_.grad.data());
  return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight_});
}

BatchNorm2d::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels}),
      beta_({channels}),
      running_mean_({channels}, 0.0),
      running_var_({channels}, 1.0) {
  gamma_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw ContractError("batch norm expects " + std::to_string(channels_) +
                        " channels, got " + x.shape_string());
  }
  const std::size_t batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  const std::size_t count = batch * plane;
  mode_ = mode;
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0);
  Tensor y(x.shape());
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(channels_); ++cl) {
    const auto c = static_cast<std::size_t>(cl);
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased =
          count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const double g = gamma_.value[c], bt = beta_.value[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * inv;
        xhat_[off + i] = xh;
        y[off + i] = g * xh + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const std::size_t batch = dy.dim(0), plane = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(batch * plane);
  Tensor dx(dy.shape());
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(channels_); ++cl) {
    const auto c = static_cast<std::size_t>(cl);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * xhat_[off + i];
      }
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;
    const double g = gamma_.value[c], inv = inv_std_[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode_ == Mode::kTrain) {
          dx[off + i] = g * inv *
                        (dy[off + i] - sum_dy / count - xhat_[off + i] * sum_dy_xhat / count);
        } else {
          dx[off + i] = g * inv * dy[off + i];
        }
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma_});
  out.push_back({prefix + ".beta", &beta_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  out.push_back({prefix + ".running_mean", &running_mean_});
  out.push_back({prefix + ".running_var", &running_var_});
}

Tensor MaxPool2x2::forward(const Tensor& x) {
  shape_ = {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  if (shape_.out_height() == 0 || shape_.out_width() == 0) {
    throw ConfigError("max pooling needs at least 2x2 input, got " + x.shape_string());
  }
  Tensor y({shape_.batch, shape_.channels, shape_.out_height(), shape_.out_width()});
  argmax_.resize(y.size());
  kernels::parallel::maxpool2x2_forward(shape_, x.data(), y.data(), argmax_.data());
  return y;
}

Tensor MaxPool2x2::backward(const Tensor& dy) {
  Tensor dx({shape_.batch, shape_.channels, shape_.height, shape_.width});
  kernels::parallel::maxpool2x2_backward(shape_, dy.data(), argmax_.data(), dx.data());
  return dx;
}

Tensor Rectifier::forward(const Tensor& x) {
  input_ = x;
  Tensor y(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
  return y;
}

Tensor Rectifier::backward(const Tensor& dy) const {
  Tensor dx(dy.shape());
  const std::size_t n = dy.size();
  for (std::size_t i = 0; i < n; ++i) dx[i] = input_[i] > 0.0 ? dy[i] : slope_ * dy[i];
  return dx;
}

}  // namespace eaen
