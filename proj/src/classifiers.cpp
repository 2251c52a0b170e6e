#include "eaen/classifiers.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

namespace eaen {

std::string to_string(ClassifierKind k) { return k == ClassifierKind::kProto ? "proto" : "tpn"; }

ClassifierKind parse_classifier(const std::string& s) {
  if (s == "proto") return ClassifierKind::kProto;
  if (s == "tpn") return ClassifierKind::kTpn;
  throw ConfigError("unknown classifier '" + s + "' (proto, tpn)");
}

std::string to_string(Distance d) {
  return d == Distance::kEuclidean ? "euclidean" : "squared_euclidean";
}

Distance parse_distance(const std::string& s) {
  if (s == "euclidean") return Distance::kEuclidean;
  if (s == "squared_euclidean") return Distance::kSquaredEuclidean;
  throw ConfigError("unknown distance '" + s + "' (euclidean, squared_euclidean)");
}

Prototypes compute_prototypes(const Matrix& e_support, const std::vector<std::size_t>& labels,
                              const std::vector<bool>& labeled, std::size_t n_way) {
  if (labels.size() != static_cast<std::size_t>(e_support.cols()) ||
      labeled.size() != labels.size()) {
    throw ContractError("support labels do not match the support embeddings");
  }
  Prototypes p;
  p.centers = Matrix::Zero(e_support.rows(), static_cast<Eigen::Index>(n_way));
  p.counts.assign(n_way, 0);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (!labeled[j]) continue;
    if (labels[j] >= n_way) throw ContractError("support label out of range");
    p.centers.col(static_cast<Eigen::Index>(labels[j])) += e_support.col(static_cast<Eigen::Index>(j));
    ++p.counts[labels[j]];
  }
  for (std::size_t t = 0; t < n_way; ++t) {
    if (p.counts[t] == 0) {
      throw ProtocolError("class " + std::to_string(t) + " has no labeled support instance");
    }
    p.centers.col(static_cast<Eigen::Index>(t)) /= static_cast<double>(p.counts[t]);
  }
  return p;
}

Matrix proto_logits(const Matrix& e_query, const Prototypes& protos, Distance distance) {
  if (e_query.rows() != protos.centers.rows()) {
    throw ContractError("query embeddings have m=" + std::to_string(e_query.rows()) +
                        ", prototypes have m=" + std::to_string(protos.centers.rows()));
  }
  for (Eigen::Index i = 0; i < e_query.cols(); ++i) {
    if (!e_query.col(i).allFinite()) {
      throw NumericError("non-finite embedding for query " + std::to_string(i));
    }
  }
  Matrix logits(e_query.cols(), protos.centers.cols());
  for (Eigen::Index i = 0; i < e_query.cols(); ++i) {
    for (Eigen::Index t = 0; t < protos.centers.cols(); ++t) {
      const double sq = (e_query.col(i) - protos.centers.col(t)).squaredNorm();
      logits(i, t) = distance == Distance::kEuclidean ? -std::sqrt(sq) : -sq;
    }
  }
  return logits;
}

ClassProbabilities softmax_rows(const Matrix& logits) {
  ClassProbabilities out;
  out.log_probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.log_probs.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

ClassProbabilities proto_probabilities(const Matrix& e_query, const Prototypes& protos,
                                       Distance distance) {
  return softmax_rows(proto_logits(e_query, protos, distance));
}

std::vector<std::size_t> predict(const ClassProbabilities& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (Eigen::Index i = 0; i < probs.log_probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index t = 1; t < probs.log_probs.cols(); ++t) {
      if (probs.log_probs(i, t) > probs.log_probs(i, best)) best = t;
    }
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return out;
}

double cross_entropy(const ClassProbabilities& probs, const std::vector<std::size_t>& labels) {
  if (labels.size() != probs.rows()) throw ContractError("label count does not match queries");
  if (labels.empty()) return 0.0;
  double total = 0.0;
  bool capped = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= probs.classes()) throw ContractError("query label out of range");
    double nll = -probs.log_probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i]));
    if (!(nll <= kCrossEntropyCap)) {
      nll = kCrossEntropyCap;
      capped = true;
    }
    total += nll;
  }
  if (capped) std::cerr << "warning: cross-entropy capped at " << kCrossEntropyCap << " per query\n";
  return total / static_cast<double>(labels.size());
}

Matrix cross_entropy_grad(const ClassProbabilities& probs, const std::vector<std::size_t>& labels) {
  Matrix g = probs.probs();
  const double inv = labels.empty() ? 0.0 : 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto t = static_cast<Eigen::Index>(labels[i]);
    if (!(-probs.log_probs(r, t) <= kCrossEntropyCap)) {
      g.row(r).setZero();
      continue;
    }
    g(r, t) -= 1.0;
  }
  return g * inv;
}

ProtoGrads proto_backward(const Matrix& e_support, const Matrix& e_query,
                          const Prototypes& protos, const std::vector<std::size_t>& labels,
                          const std::vector<bool>& labeled, const Matrix& d_logits,
                          Distance distance) {
  ProtoGrads out;
  out.support = Matrix::Zero(e_support.rows(), e_support.cols());
  out.query = Matrix::Zero(e_query.rows(), e_query.cols());
  Matrix d_centers = Matrix::Zero(protos.centers.rows(), protos.centers.cols());
  for (Eigen::Index i = 0; i < e_query.cols(); ++i) {
    for (Eigen::Index t = 0; t < protos.centers.cols(); ++t) {
      const double d_dist = -d_logits(i, t);
      if (d_dist == 0.0) continue;
      const Vector diff = e_query.col(i) - protos.centers.col(t);
      Vector dd;
      if (distance == Distance::kEuclidean) {
        const double norm = diff.norm();
        if (norm == 0.0) continue;  // subgradient 0 at coincidence
        dd = diff / norm;
      } else {
        dd = 2.0 * diff;
      }
      out.query.col(i) += d_dist * dd;
      d_centers.col(t) -= d_dist * dd;
    }
  }
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (!labeled[j]) continue;
    out.support.col(static_cast<Eigen::Index>(j)) +=
        d_centers.col(static_cast<Eigen::Index>(labels[j])) /
        static_cast<double>(protos.counts[labels[j]]);
  }
  return out;
}

PropagationResult label_propagate(const Matrix& e_support, const Matrix& e_query,
                                  const std::vector<std::size_t>& support_labels,
                                  const std::vector<bool>& labeled, std::size_t n_way,
                                  const PropagationConfig& config) {
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
    throw ConfigError("propagation alpha must lie strictly inside (0,1), got " +
                      std::to_string(config.alpha));
  }
  if (support_labels.size() != static_cast<std::size_t>(e_support.cols()) ||
      labeled.size() != support_labels.size()) {
    throw ContractError("support labels do not match the support embeddings");
  }
  if (e_query.cols() > 0 && e_query.rows() != e_support.rows()) {
    throw ContractError("support and query embeddings differ in m");
  }
  const Eigen::Index m = e_support.rows();
  const Eigen::Index ns = e_support.cols();
  const Eigen::Index n = ns + e_query.cols();
  const Vector scale = config.scale.size() == 0 ? Vector::Ones(m) : config.scale;
  if (scale.size() != m) throw ContractError("propagation scale has the wrong length");

  PropagationResult r;
  r.n_support = static_cast<std::size_t>(ns);
  r.e.resize(m, n);
  r.e.leftCols(ns) = e_support;
  r.e.rightCols(e_query.cols()) = e_query;
  if (!r.e.allFinite()) throw NumericError("non-finite embedding in label propagation");

  const Matrix u = scale.asDiagonal() * r.e;
  const double inv_m = 1.0 / static_cast<double>(m);
  Matrix affinity = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double sq = (u.col(i) - u.col(j)).squaredNorm() * inv_m;
      affinity(i, j) = affinity(j, i) = std::exp(-0.5 * sq);
    }
  }
  r.mask = Matrix::Ones(n, n);
  r.mask.diagonal().setZero();
  const auto k = static_cast<Eigen::Index>(config.graph_k);
  if (k > 0 && k < n - 1) {
    r.mask.setZero();
    std::vector<Eigen::Index> order;
    for (Eigen::Index i = 0; i < n; ++i) {
      order.resize(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      order.erase(order.begin() + i);
      std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return affinity(i, a) > affinity(i, b);
      });
      for (Eigen::Index q = 0; q < k; ++q) {
        r.mask(i, order[static_cast<std::size_t>(q)]) = 1.0;
        r.mask(order[static_cast<std::size_t>(q)], i) = 1.0;
      }
    }
  }
  r.w = affinity.cwiseProduct(r.mask);
  const Vector degree = r.w.rowwise().sum();
  r.inv_sqrt_degree = degree.unaryExpr([](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 0.0; });
  r.normalized = r.inv_sqrt_degree.asDiagonal() * r.w * r.inv_sqrt_degree.asDiagonal();

  Matrix system = Matrix::Identity(n, n) - config.alpha * r.normalized;
  r.system.compute(system);
  if (r.system.info() != Eigen::Success) {
    throw NumericError("label propagation system is not positive definite");
  }
  Matrix y0 = Matrix::Zero(n, static_cast<Eigen::Index>(n_way));
  for (Eigen::Index j = 0; j < ns; ++j) {
    if (!labeled[static_cast<std::size_t>(j)]) continue;
    const auto label = support_labels[static_cast<std::size_t>(j)];
    if (label >= n_way) throw ContractError("support label out of range");
    y0(j, static_cast<Eigen::Index>(label)) = 1.0;
  }
  r.z = r.system.solve(y0);
  r.query = softmax_rows(r.z.bottomRows(e_query.cols()));
  return r;
}

PropagationGrads label_propagate_backward(const PropagationResult& r,
                                          const PropagationConfig& config,
                                          const Matrix& d_query_logits) {
  const Eigen::Index m = r.e.rows();
  const Eigen::Index n = r.e.cols();
  const auto ns = static_cast<Eigen::Index>(r.n_support);
  const Vector scale = config.scale.size() == 0 ? Vector::Ones(m) : config.scale;
  if (d_query_logits.rows() != n - ns || d_query_logits.cols() != r.z.cols()) {
    throw ContractError("propagation gradient has the wrong shape");
  }
  Matrix dz = Matrix::Zero(n, r.z.cols());
  dz.bottomRows(n - ns) = d_query_logits;
  const Matrix x = r.system.solve(dz);
  const Matrix d_norm = config.alpha * x * r.z.transpose();

  const Vector& inv = r.inv_sqrt_degree;
  Matrix dw = inv.asDiagonal() * d_norm * inv.asDiagonal();
  const Matrix sym = d_norm + d_norm.transpose();
  Vector d_inv = (sym.cwiseProduct(r.w)) * inv;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (inv(i) == 0.0) continue;
    const double d_deg = -0.5 * d_inv(i) * inv(i) * inv(i) * inv(i);
    dw.row(i).array() += d_deg;
  }

  PropagationGrads g;
  g.e = Matrix::Zero(m, n);
  g.scale = Vector::Zero(m);
  const double inv_m = 1.0 / static_cast<double>(m);
  const Vector s2 = scale.cwiseProduct(scale);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (r.w(i, j) == 0.0) continue;
      const double d_sq = -0.5 * r.w(i, j) * (dw(i, j) + dw(j, i));
      const Vector diff = r.e.col(i) - r.e.col(j);
      const Vector de = (2.0 * inv_m * d_sq) * s2.cwiseProduct(diff);
      g.e.col(i) += de;
      g.e.col(j) -= de;
      g.scale += (2.0 * inv_m * d_sq) * scale.cwiseProduct(diff.cwiseProduct(diff));
    }
  }
  return g;
}

}  // namespace eaen
