#include "eaen/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace eaen::kernels {

namespace {

using std::size_t;

// Rows: (c, ky, kx); columns: (y, x).
void im2col(const ConvShape& s, const double* img, double* col) {
  const size_t k = s.kernel;
  const long pad = static_cast<long>(s.pad());
  const long h = static_cast<long>(s.height);
  const long w = static_cast<long>(s.width);
  const size_t rows = s.in_channels * k * k;
#pragma omp parallel for schedule(static)
  for (long r = 0; r < static_cast<long>(rows); ++r) {
    const size_t c = static_cast<size_t>(r) / (k * k);
    const long ky = static_cast<long>((static_cast<size_t>(r) / k) % k);
    const long kx = static_cast<long>(static_cast<size_t>(r) % k);
    const double* plane = img + c * s.plane();
    double* out = col + static_cast<size_t>(r) * s.plane();
    for (long y = 0; y < h; ++y) {
      const long iy = y + ky - pad;
      for (long x = 0; x < w; ++x) {
        const long ix = x + kx - pad;
        out[y * w + x] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix] : 0.0;
      }
    }
  }
}

// Channels are disjoint in the output, so each thread owns whole planes.
void col2im(const ConvShape& s, const double* col, double* img) {
  const size_t k = s.kernel;
  const long pad = static_cast<long>(s.pad());
  const long h = static_cast<long>(s.height);
  const long w = static_cast<long>(s.width);
#pragma omp parallel for schedule(static)
  for (long c = 0; c < static_cast<long>(s.in_channels); ++c) {
    double* plane = img + static_cast<size_t>(c) * s.plane();
    std::fill(plane, plane + s.plane(), 0.0);
    for (size_t ky = 0; ky < k; ++ky) {
      for (size_t kx = 0; kx < k; ++kx) {
        const double* in = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * s.plane();
        for (long y = 0; y < h; ++y) {
          const long iy = y + static_cast<long>(ky) - pad;
          if (iy < 0 || iy >= h) continue;
          for (long x = 0; x < w; ++x) {
            const long ix = x + static_cast<long>(kx) - pad;
            if (ix < 0 || ix >= w) continue;
            plane[iy * w + ix] += in[y * w + x];
          }
        }
      }
    }
  }
}

void transpose(size_t rows, size_t cols, const double* in, double* out) {
#pragma omp parallel for schedule(static)
  for (long c = 0; c < static_cast<long>(cols); ++c) {
    for (size_t r = 0; r < rows; ++r) out[static_cast<size_t>(c) * rows + r] = in[r * cols + c];
  }
}

}  // namespace

namespace parallel {

void gemm_nn(size_t m, size_t n, size_t k, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(m); ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    const double* arow = a + static_cast<size_t>(i) * k;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(size_t m, size_t n, size_t k, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(m); ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = a[p * m + static_cast<size_t>(i)];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void conv2d_forward(const ConvShape& s, const double* x, const double* w, double* y) {
  const size_t rows = s.in_channels * s.kernel * s.kernel;
  std::vector<double> col(rows * s.plane());
  std::fill(y, y + s.output_size(), 0.0);
  for (size_t b = 0; b < s.batch; ++b) {
    const double* img = x + b * s.in_channels * s.plane();
    double* out = y + b * s.out_channels * s.plane();
    if (s.kernel == 1) {
      gemm_nn(s.out_channels, s.plane(), rows, w, img, out);
    } else {
      im2col(s, img, col.data());
      gemm_nn(s.out_channels, s.plane(), rows, w, col.data(), out);
    }
  }
}

void conv2d_backward(const ConvShape& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw) {
  const size_t rows = s.in_channels * s.kernel * s.kernel;
  std::vector<double> col(rows * s.plane());
  std::vector<double> col_t(rows * s.plane());
  for (size_t b = 0; b < s.batch; ++b) {
    const double* img = x + b * s.in_channels * s.plane();
    const double* g = dy + b * s.out_channels * s.plane();
    if (dw != nullptr) {
      if (s.kernel == 1) {
        transpose(rows, s.plane(), img, col_t.data());
      } else {
        im2col(s, img, col.data());
        transpose(rows, s.plane(), col.data(), col_t.data());
      }
      // dW[out x rows] += dY[out x plane] * col^T[plane x rows]
      gemm_nn(s.out_channels, rows, s.plane(), g, col_t.data(), dw);
    }
    if (dx != nullptr) {
      double* gi = dx + b * s.in_channels * s.plane();
      if (s.kernel == 1) {
        std::fill(gi, gi + s.in_channels * s.plane(), 0.0);
        gemm_tn(rows, s.plane(), s.out_channels, w, g, gi);
      } else {
        std::fill(col.begin(), col.end(), 0.0);
        gemm_tn(rows, s.plane(), s.out_channels, w, g, col.data());
        col2im(s, col.data(), gi);
      }
    }
  }
}

void maxpool2x2_forward(const PoolShape& s, const double* x, double* y, std::uint32_t* argmax) {
  const size_t oh = s.out_height(), ow = s.out_width();
  const size_t planes = s.batch * s.channels;
#pragma omp parallel for schedule(static)
  for (long p = 0; p < static_cast<long>(planes); ++p) {
    const size_t base = static_cast<size_t>(p) * s.height * s.width;
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        size_t best = base + (2 * oy) * s.width + 2 * ox;
        for (size_t dy = 0; dy < 2; ++dy) {
          for (size_t dx = 0; dx < 2; ++dx) {
            const size_t idx = base + (2 * oy + dy) * s.width + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const size_t o = (static_cast<size_t>(p) * oh + oy) * ow + ox;
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

void maxpool2x2_backward(const PoolShape& s, const double* dy, const std::uint32_t* argmax,
                         double* dx) {
  const size_t in_plane = s.height * s.width;
  const size_t out_plane = s.out_height() * s.out_width();
  const size_t planes = s.batch * s.channels;
#pragma omp parallel for schedule(static)
  for (long p = 0; p < static_cast<long>(planes); ++p) {
    double* gi = dx + static_cast<size_t>(p) * in_plane;
    std::fill(gi, gi + in_plane, 0.0);
    for (size_t o = static_cast<size_t>(p) * out_plane; o < (static_cast<size_t>(p) + 1) * out_plane;
         ++o) {
      dx[argmax[o]] += dy[o];
    }
  }
}

}  // namespace parallel

namespace reference {

void gemm_nn(size_t m, size_t n, size_t k, const double* a, const double* b, double* c) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

void gemm_tn(size_t m, size_t n, size_t k, const double* a, const double* b, double* c) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

void conv2d_forward(const ConvShape& s, const double* x, const double* w, double* y) {
  const long pad = static_cast<long>(s.pad());
  const long h = static_cast<long>(s.height), wd = static_cast<long>(s.width);
  const long k = static_cast<long>(s.kernel);
  for (size_t b = 0; b < s.batch; ++b)
    for (size_t o = 0; o < s.out_channels; ++o)
      for (long yy = 0; yy < h; ++yy)
        for (long xx = 0; xx < wd; ++xx) {
          double acc = 0.0;
          for (size_t c = 0; c < s.in_channels; ++c)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const long iy = yy + ky - pad, ix = xx + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w[((o * s.in_channels + c) * s.kernel + ky) * s.kernel + kx] *
                       x[((b * s.in_channels + c) * s.height + iy) * s.width + ix];
              }
          y[((b * s.out_channels + o) * s.height + yy) * s.width + xx] = acc;
        }
}

void conv2d_backward(const ConvShape& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw) {
  const long pad = static_cast<long>(s.pad());
  const long h = static_cast<long>(s.height), wd = static_cast<long>(s.width);
  const long k = static_cast<long>(s.kernel);
  if (dx != nullptr) std::fill(dx, dx + s.input_size(), 0.0);
  for (size_t b = 0; b < s.batch; ++b)
    for (size_t o = 0; o < s.out_channels; ++o)
      for (long yy = 0; yy < h; ++yy)
        for (long xx = 0; xx < wd; ++xx) {
          const double g = dy[((b * s.out_channels + o) * s.height + yy) * s.width + xx];
          for (size_t c = 0; c < s.in_channels; ++c)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const long iy = yy + ky - pad, ix = xx + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                const size_t wi = ((o * s.in_channels + c) * s.kernel + ky) * s.kernel + kx;
                const size_t xi = ((b * s.in_channels + c) * s.height + iy) * s.width + ix;
                if (dw != nullptr) dw[wi] += g * x[xi];
                if (dx != nullptr) dx[xi] += g * w[wi];
              }
        }
}

void maxpool2x2_forward(const PoolShape& s, const double* x, double* y, std::uint32_t* argmax) {
  const size_t oh = s.out_height(), ow = s.out_width();
  for (size_t p = 0; p < s.batch * s.channels; ++p)
    for (size_t oy = 0; oy < oh; ++oy)
      for (size_t ox = 0; ox < ow; ++ox) {
        const size_t base = p * s.height * s.width;
        size_t best = base + 2 * oy * s.width + 2 * ox;
        const size_t cand[4] = {best, best + 1, best + s.width, best + s.width + 1};
        for (size_t idx : cand)
          if (x[idx] > x[best]) best = idx;
        const size_t o = (p * oh + oy) * ow + ox;
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
}

void maxpool2x2_backward(const PoolShape& s, const double* dy, const std::uint32_t* argmax,
                         double* dx) {
  std::fill(dx, dx + s.batch * s.channels * s.height * s.width, 0.0);
  for (size_t o = 0; o < s.output_size(); ++o) dx[argmax[o]] += dy[o];
}

}  // namespace reference

}  // namespace eaen::kernels
