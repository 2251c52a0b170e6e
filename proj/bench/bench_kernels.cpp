// Times the OpenMP kernels against their serial reference twins.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include <omp.h>

#include "eaen/kernels.hpp"

namespace k = eaen::kernels;

namespace {

double seconds_per_call(const std::function<void()>& fn, int reps) {
  fn();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void row(const char* name, double ref, double par) {
  std::printf("%-34s %10.3f ms %10.3f ms %8.2fx\n", name, 1e3 * ref, 1e3 * par, ref / par);
}

}  // namespace

int main() {
  std::mt19937_64 rng(1);
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-34s %13s %13s %9s\n", "kernel", "reference", "parallel", "speedup");

  for (std::size_t n : {64, 256}) {
    auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
    std::vector<double> c(n * n);
    const int reps = n == 64 ? 200 : 5;
    char name[64];
    std::snprintf(name, sizeof name, "gemm_nn %zux%zux%zu", n, n, n);
    row(name, seconds_per_call([&] { k::reference::gemm_nn(n, n, n, a.data(), b.data(), c.data()); }, reps),
        seconds_per_call([&] { k::parallel::gemm_nn(n, n, n, a.data(), b.data(), c.data()); }, reps));
  }

  struct Case {
    const char* name;
    k::ConvShape s;
  };
  const Case cases[] = {
      {"conv fwd+bwd 12x3x32x32 -> 64", {12, 3, 32, 32, 64, 3}},
      {"conv fwd+bwd 12x64x16x16 -> 64", {12, 64, 16, 16, 64, 3}},
      {"conv fwd+bwd 12x64x8x8 -> 64", {12, 64, 8, 8, 64, 3}},
  };
  for (const auto& c : cases) {
    auto x = random_vec(c.s.input_size(), rng), w = random_vec(c.s.weight_size(), rng);
    auto dy = random_vec(c.s.output_size(), rng);
    std::vector<double> y(c.s.output_size()), dx(c.s.input_size()), dw(c.s.weight_size());
    auto ref = [&] {
      k::reference::conv2d_forward(c.s, x.data(), w.data(), y.data());
      k::reference::conv2d_backward(c.s, x.data(), w.data(), dy.data(), dx.data(), dw.data());
    };
    auto par = [&] {
      k::parallel::conv2d_forward(c.s, x.data(), w.data(), y.data());
      k::parallel::conv2d_backward(c.s, x.data(), w.data(), dy.data(), dx.data(), dw.data());
    };
    row(c.name, seconds_per_call(ref, 2), seconds_per_call(par, 2));
  }
  return 0;
}
