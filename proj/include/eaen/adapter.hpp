#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "eaen/errors.hpp"

namespace eaen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class AdaptMode { kFullEpisode, kSupportOnly, kOff };
enum class Activation { kRelu, kSigmoid, kTanh, kLinear };

std::string to_string(AdaptMode m);
AdaptMode parse_adapt_mode(const std::string& s);
std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

double activate(Activation act, double x);
// Derivative expressed through the pre-activation value.
double activate_grad(Activation act, double pre);

// Episode adaptive module. The generic embedding matrix G is m x n with one
// column per episode instance; every row (channel-pixel) is pushed through
// the same three bias-free layers:
//   P = hidden(G  Wp^T)   m x d   (row i of Wp is a 1 x n kernel)
//   Z = hidden(P  Wz^T)   m x f
//   a = output(Z  Wa)     m
// and E = diag(a) G rescales every instance with the same vector.
struct AdaptParams {
  RowMajorMatrix wp;  // d x n
  RowMajorMatrix wz;  // f x d
  Vector wa;          // f
  Activation hidden = Activation::kRelu;
  Activation output = Activation::kSigmoid;
  AdaptMode mode = AdaptMode::kFullEpisode;

  std::size_t n() const noexcept { return static_cast<std::size_t>(wp.cols()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(wp.rows()); }
  std::size_t f() const noexcept { return static_cast<std::size_t>(wz.rows()); }
};

struct AdaptCaches {
  Matrix pre_p, p;  // m x d
  Matrix pre_z, z;  // m x f
  Vector pre_f, a;  // m
};

struct AdaptGrads {
  RowMajorMatrix wp, wz;
  Vector wa;
  Matrix g;  // same shape as the G passed to adapt_backward
};

struct AdaptResult {
  Vector a;
  AdaptCaches caches;
};

// G must have exactly params.n() columns.
AdaptResult adapt_forward(const Matrix& g, const AdaptParams& params);

// E(:, j) = a .* G(:, j)
Matrix apply_adaptation(const Vector& a, const Matrix& g);
Vector apply_adaptation(const Vector& a, const Vector& g);

// Gradients of the composite map G -> E = diag(a(G_in)) G, where G_in is the
// first params.n() columns of G (all of G in full-episode mode, the support
// block in support-only mode). d_e has the shape of G. The returned g
// gradient sums the direct path through G and the path through a.
AdaptGrads adapt_backward(const AdaptCaches& caches, const Matrix& g, const AdaptParams& params,
                          const Matrix& d_e);

struct AdapterShape {
  std::size_t n_way = 5;
  std::size_t support_per_class = 1;
  std::size_t query_per_class = 15;
};

// Wp and Wz are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); Wa starts at
// zero so the initial adaptive vector is output(0) everywhere.
AdaptParams build_adapter(const AdapterShape& shape, AdaptMode mode, std::size_t d,
                          std::size_t f, Activation hidden, Activation output,
                          std::uint64_t seed);

}  // namespace eaen
