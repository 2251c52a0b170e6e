#pragma once

#include <optional>

#include "eaen/adapter.hpp"
#include "eaen/backbone.hpp"
#include "eaen/classifiers.hpp"
#include "eaen/episodes.hpp"

namespace eaen {

// How unlabeled support instances are treated in semi-supervised episodes.
// kSemiSupervised keeps them in the episode (they shape the adaptive vector
// and the propagation graph but not the prototypes); kSupervised drops them.
enum class SupportStrategy { kSemiSupervised, kSupervised };

std::string to_string(SupportStrategy s);
SupportStrategy parse_strategy(const std::string& s);

struct ModelConfig {
  BackboneConfig backbone;
  ImageShape image_shape{32, 32, 3};
  EpisodeSpec spec;
  SupportStrategy strategy = SupportStrategy::kSemiSupervised;
  AdaptMode adapt_mode = AdaptMode::kFullEpisode;
  std::size_t adapt_d = 64;
  std::size_t adapt_f = 32;
  Activation hidden_activation = Activation::kRelu;
  Activation output_activation = Activation::kSigmoid;
  ClassifierKind classifier = ClassifierKind::kProto;
  Distance distance = Distance::kEuclidean;
  double tpn_alpha = 0.99;
  std::size_t tpn_graph_k = 0;
  std::uint64_t seed = 1;
};

struct EpisodeOutput {
  double loss = 0.0;
  double accuracy = 0.0;
  Matrix logits;  // n_q x N
  ClassProbabilities probs;
  std::vector<std::size_t> predictions;
  Matrix generic;  // m x n, G in canonical order
  Matrix adapted;  // m x n, E
  Vector adaptive;  // a (ones when adaptation is off)
};

// Backbone -> episode adaptive module -> distance classifier.
class Model {
 public:
  explicit Model(ModelConfig config);

  // Eval-mode or train-mode forward pass without touching gradients.
  EpisodeOutput forward(const Episode& episode, Mode mode);
  // Train-mode forward plus backward; gradients are accumulated, not reset.
  EpisodeOutput forward_backward(const Episode& episode);

  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  void zero_grad();

  const ModelConfig& config() const noexcept { return config_; }
  Backbone& backbone() noexcept { return backbone_; }
  std::size_t embedding_dim() const noexcept { return m_; }
  // Instances per episode after applying the support strategy.
  AdapterShape episode_shape() const noexcept { return shape_; }
  // Column count of the adapter's first layer (0 when adaptation is off).
  std::size_t adapter_n() const;
  AdaptParams adapt_params() const;

  // Replaces the adaptive vector with ones (test hook for identity checks).
  void set_force_unit_adaptation(bool on) noexcept { force_unit_ = on; }

  // Applies the support strategy and checks the episode against the shape
  // the model was built for.
  Episode prepare(const Episode& episode) const;

 private:
  EpisodeOutput run(const Episode& episode, Mode mode, bool backward);

  ModelConfig config_;
  Backbone backbone_;
  AdapterShape shape_;
  std::size_t m_ = 0;
  Parameter wp_, wz_, wa_;
  Parameter tpn_scale_;
  bool force_unit_ = false;
};

}  // namespace eaen
