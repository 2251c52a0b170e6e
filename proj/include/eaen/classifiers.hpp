#pragma once

#include <string>
#include <vector>

#include "eaen/adapter.hpp"

namespace eaen {

enum class Distance { kEuclidean, kSquaredEuclidean };
enum class ClassifierKind { kProto, kTpn };

std::string to_string(ClassifierKind k);
ClassifierKind parse_classifier(const std::string& s);
std::string to_string(Distance d);
Distance parse_distance(const std::string& s);

// Column t is the mean of the labeled support embeddings of class t.
struct Prototypes {
  Matrix centers;                   // m x N
  std::vector<std::size_t> counts;  // labeled shots per class
};

// Row-wise class log-probabilities, n_q x N.
struct ClassProbabilities {
  Matrix log_probs;
  Matrix probs() const { return log_probs.array().exp().matrix(); }
  std::size_t rows() const { return static_cast<std::size_t>(log_probs.rows()); }
  std::size_t classes() const { return static_cast<std::size_t>(log_probs.cols()); }
};

// Throws ProtocolError naming a class with no labeled support embedding.
Prototypes compute_prototypes(const Matrix& e_support, const std::vector<std::size_t>& labels,
                              const std::vector<bool>& labeled, std::size_t n_way);

// logits(i, t) = -d(e_i, c_t). Throws NumericError on non-finite embeddings.
Matrix proto_logits(const Matrix& e_query, const Prototypes& protos,
                    Distance distance = Distance::kEuclidean);

// Max-shifted log-softmax of each row.
ClassProbabilities softmax_rows(const Matrix& logits);

ClassProbabilities proto_probabilities(const Matrix& e_query, const Prototypes& protos,
                                       Distance distance = Distance::kEuclidean);

// Row-wise argmax; ties go to the lowest class index.
std::vector<std::size_t> predict(const ClassProbabilities& probs);

// Per-query losses are capped at this value, with zero gradient when capped.
inline constexpr double kCrossEntropyCap = 1e4;

// Mean negative log-likelihood of the true labels.
double cross_entropy(const ClassProbabilities& probs, const std::vector<std::size_t>& labels);

// d loss / d logits for the mean cross-entropy over softmax_rows(logits).
Matrix cross_entropy_grad(const ClassProbabilities& probs, const std::vector<std::size_t>& labels);

struct ProtoGrads {
  Matrix support;  // m x n_s
  Matrix query;    // m x n_q
};

// Backpropagates d loss / d logits through proto_logits and compute_prototypes.
ProtoGrads proto_backward(const Matrix& e_support, const Matrix& e_query,
                          const Prototypes& protos, const std::vector<std::size_t>& labels,
                          const std::vector<bool>& labeled, const Matrix& d_logits,
                          Distance distance = Distance::kEuclidean);

// Transductive label propagation over all episode embeddings.
struct PropagationConfig {
  double alpha = 0.99;
  std::size_t graph_k = 0;  // 0 keeps the full graph
  Vector scale;             // per-dimension scale of the distance, length m
};

struct PropagationResult {
  ClassProbabilities query;  // softmax of the query rows of z
  Matrix z;                  // n x N propagated label scores
  // caches for the backward pass
  Matrix e;       // m x n, support columns then query columns
  Matrix w;       // n x n masked Gaussian affinities
  Matrix mask;    // n x n, 1 where an edge is kept
  Vector inv_sqrt_degree;
  Matrix normalized;  // D^-1/2 W D^-1/2
  Eigen::LLT<Matrix> system;  // I - alpha * normalized
  std::size_t n_support = 0;
};

// W(i,j) = exp(-||s .* (e_i - e_j)||^2 / (2m)) for i != j, kept for the
// graph_k nearest neighbours of either endpoint; Z = (I - alpha Wn)^-1 Y0,
// where Y0 one-hot encodes the labeled support rows.
PropagationResult label_propagate(const Matrix& e_support, const Matrix& e_query,
                                  const std::vector<std::size_t>& support_labels,
                                  const std::vector<bool>& labeled, std::size_t n_way,
                                  const PropagationConfig& config);

struct PropagationGrads {
  Matrix e;      // m x n
  Vector scale;  // m
};

// d_query_logits is d loss / d z for the query rows (n_q x N).
PropagationGrads label_propagate_backward(const PropagationResult& result,
                                          const PropagationConfig& config,
                                          const Matrix& d_query_logits);

}  // namespace eaen
