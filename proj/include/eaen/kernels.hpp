#pragma once

#include <cstddef>
#include <cstdint>

// Compute kernels for the convolutional backbones.
//
// Every kernel in `parallel` has a twin in `reference` with the same
// signature. The reference versions are plain serial loops kept for testing
// and benchmarking; production code calls `parallel`. Parallel kernels split
// work so that each output element is owned by exactly one thread and is
// accumulated in a fixed order, so results do not depend on the thread count.

namespace eaen::kernels {

// Stride-1 convolution with "same" zero padding (pad = kernel / 2), NCHW.
struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;

  std::size_t pad() const noexcept { return kernel / 2; }
  std::size_t plane() const noexcept { return height * width; }
  std::size_t input_size() const noexcept { return batch * in_channels * plane(); }
  std::size_t output_size() const noexcept { return batch * out_channels * plane(); }
  std::size_t weight_size() const noexcept {
    return out_channels * in_channels * kernel * kernel;
  }
};

struct PoolShape {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 2;
  std::size_t width = 2;

  std::size_t out_height() const noexcept { return height / 2; }
  std::size_t out_width() const noexcept { return width / 2; }
  std::size_t output_size() const noexcept {
    return batch * channels * out_height() * out_width();
  }
};

namespace parallel {

// C[M x N] += A[M x K] * B[K x N], all row-major.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
// C[M x N] += A^T * B where A is stored K x M.
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

// y is overwritten.
void conv2d_forward(const ConvShape& s, const double* x, const double* w, double* y);
// dx is overwritten (skipped when null); dw is accumulated into.
void conv2d_backward(const ConvShape& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw);

// 2x2 max pooling with floor semantics. argmax receives, for every output,
// the flat input index that won (first maximum in row-major window order).
void maxpool2x2_forward(const PoolShape& s, const double* x, double* y, std::uint32_t* argmax);
void maxpool2x2_backward(const PoolShape& s, const double* dy, const std::uint32_t* argmax,
                         double* dx);

}  // namespace parallel

namespace reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
void conv2d_forward(const ConvShape& s, const double* x, const double* w, double* y);
void conv2d_backward(const ConvShape& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw);
void maxpool2x2_forward(const PoolShape& s, const double* x, double* y, std::uint32_t* argmax);
void maxpool2x2_backward(const PoolShape& s, const double* dy, const std::uint32_t* argmax,
                         double* dx);

}  // namespace reference

}  // namespace eaen::kernels
