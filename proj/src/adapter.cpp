#include "eaen/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "eaen/rng.hpp"

namespace eaen {

std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::kFullEpisode: return "full_episode";
    case AdaptMode::kSupportOnly: return "support_only";
    case AdaptMode::kOff: return "off";
  }
  return "?";
}

AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "full_episode") return AdaptMode::kFullEpisode;
  if (s == "support_only") return AdaptMode::kSupportOnly;
  if (s == "off") return AdaptMode::kOff;
  throw ConfigError("unknown adapt mode '" + s + "' (full_episode, support_only, off)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kLinear: return "linear";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "tanh") return Activation::kTanh;
  if (s == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + s + "' (relu, sigmoid, tanh, linear)");
}

double activate(Activation act, double x) {
  switch (act) {
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kSigmoid: {
      // Kept strictly inside (0,1) even where the exact value rounds to 0 or 1.
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      return std::clamp(s, std::numeric_limits<double>::denorm_min(), 1.0 - 0x1p-53);
    }
    case Activation::kTanh: return std::tanh(x);
    case Activation::kLinear: return x;
  }
  return x;
}

double activate_grad(Activation act, double pre) {
  switch (act) {
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid: {
      const double s = activate(act, pre);
      return s * (1.0 - s);
    }
    case Activation::kTanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::kLinear: return 1.0;
  }
  return 1.0;
}

namespace {

template <class M>
M apply(Activation act, const M& pre) {
  return pre.unaryExpr([act](double v) { return activate(act, v); });
}

template <class M>
M apply_grad(Activation act, const M& pre) {
  return pre.unaryExpr([act](double v) { return activate_grad(act, v); });
}

}  // namespace

AdaptResult adapt_forward(const Matrix& g, const AdaptParams& params) {
  if (params.mode == AdaptMode::kOff) {
    throw ContractError("adapt_forward called with adaptation off; use the identity path");
  }
  if (static_cast<std::size_t>(g.cols()) != params.n()) {
    throw ContractError("adapter was built for n=" + std::to_string(params.n()) +
                        " instances per episode but received " + std::to_string(g.cols()) +
                        " (" + to_string(params.mode) + " mode)");
  }
  if (params.wz.cols() != params.wp.rows() || params.wa.size() != params.wz.rows()) {
    throw ContractError("adapter weights are inconsistent: wp " + std::to_string(params.wp.rows()) +
                        "x" + std::to_string(params.wp.cols()) + ", wz " +
                        std::to_string(params.wz.rows()) + "x" + std::to_string(params.wz.cols()) +
                        ", wa " + std::to_string(params.wa.size()));
  }
  AdaptResult r;
  auto& c = r.caches;
  c.pre_p = g * params.wp.transpose();
  c.p = apply(params.hidden, c.pre_p);
  c.pre_z = c.p * params.wz.transpose();
  c.z = apply(params.hidden, c.pre_z);
  c.pre_f = c.z * params.wa;
  c.a = apply(params.output, c.pre_f);
  r.a = c.a;
  return r;
}

Matrix apply_adaptation(const Vector& a, const Matrix& g) {
  if (a.size() != g.rows()) {
    throw ContractError("adaptive vector has length " + std::to_string(a.size()) +
                        " but embeddings have m=" + std::to_string(g.rows()));
  }
  return a.asDiagonal() * g;
}

Vector apply_adaptation(const Vector& a, const Vector& g) {
  if (a.size() != g.size()) {
    throw ContractError("adaptive vector has length " + std::to_string(a.size()) +
                        " but embedding has m=" + std::to_string(g.size()));
  }
  return a.cwiseProduct(g);
}

AdaptGrads adapt_backward(const AdaptCaches& caches, const Matrix& g, const AdaptParams& params,
                          const Matrix& d_e) {
  const auto m = g.rows();
  const auto n_in = static_cast<Eigen::Index>(params.n());
  if (caches.a.size() != m || caches.pre_p.rows() != m ||
      caches.pre_p.cols() != static_cast<Eigen::Index>(params.d()) ||
      caches.pre_z.cols() != static_cast<Eigen::Index>(params.f()) || g.cols() < n_in ||
      d_e.rows() != g.rows() || d_e.cols() != g.cols()) {
    throw ContractError("adapter caches do not match the given embeddings/parameters");
  }
  AdaptGrads out;
  // direct path
  out.g = caches.a.asDiagonal() * d_e;
  // path through a
  const Vector da = d_e.cwiseProduct(g).rowwise().sum();
  const Vector d_pre_f = da.cwiseProduct(apply_grad(params.output, caches.pre_f));
  out.wa = caches.z.transpose() * d_pre_f;
  const Matrix d_z = d_pre_f * params.wa.transpose();
  const Matrix d_pre_z = d_z.cwiseProduct(apply_grad(params.hidden, caches.pre_z));
  out.wz = d_pre_z.transpose() * caches.p;
  const Matrix d_p = d_pre_z * params.wz;
  const Matrix d_pre_p = d_p.cwiseProduct(apply_grad(params.hidden, caches.pre_p));
  out.wp = d_pre_p.transpose() * g.leftCols(n_in);
  out.g.leftCols(n_in) += d_pre_p * params.wp;
  return out;
}

AdaptParams build_adapter(const AdapterShape& shape, AdaptMode mode, std::size_t d,
                          std::size_t f, Activation hidden, Activation output,
                          std::uint64_t seed) {
  if (mode == AdaptMode::kOff) throw ContractError("adaptation off has no parameters");
  if (d == 0 || f == 0) throw ConfigError("adapter widths d and f must be at least 1");
  const std::size_t n_support = shape.n_way * shape.support_per_class;
  const std::size_t n = mode == AdaptMode::kFullEpisode
                            ? n_support + shape.n_way * shape.query_per_class
                            : n_support;
  if (n == 0) throw ConfigError("adapter needs at least one instance column");
  AdaptParams p;
  p.mode = mode;
  p.hidden = hidden;
  p.output = output;
  Rng rng = make_rng(seed, 0xada9);
  auto fill = [&](RowMajorMatrix& w, std::size_t rows, std::size_t cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    w.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
  };
  fill(p.wp, d, n);
  fill(p.wz, f, d);
  p.wa = Vector::Zero(static_cast<Eigen::Index>(f));
  return p;
}

}  // namespace eaen
