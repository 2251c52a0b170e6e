#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "eaen/layers.hpp"

namespace eaen {

enum class Architecture { kConvNet4, kResNet12 };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

struct BackboneConfig {
  Architecture arch = Architecture::kConvNet4;
  std::size_t in_channels = 3;
  // Output channels of the four blocks. Empty means the architecture default:
  // 64/64/64/64 for ConvNet-4, 64/128/256/64 for ResNet-12.
  std::vector<std::size_t> channels;
  double leaky_slope = 0.1;  // ResNet-12 only

  std::vector<std::size_t> resolved_channels() const;
};

// Output geometry of a backbone: c' x h' x w'.
struct EmbeddingShape {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t flat() const noexcept { return channels * height * width; }
};

// conv3x3 -> BN -> maxpool 2x2 -> ReLU
class ConvBlock {
 public:
  ConvBlock(std::size_t in, std::size_t out);
  void init(Rng& rng) { conv_.init(rng); }
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out);
  std::size_t out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
  MaxPool2x2 pool_;
  Rectifier relu_;
};

// Three conv3x3 -> BN layers with LeakyReLU between them, an identity or
// 1x1-conv+BN projection shortcut, LeakyReLU after the sum, then 2x2 max-pool.
class ResidualBlock {
 public:
  ResidualBlock(std::size_t in, std::size_t out, double slope);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out);
  std::size_t out_channels() const { return conv3_.out_channels(); }
  bool has_projection() const { return has_projection_; }

 private:
  Conv2d conv1_, conv2_, conv3_, proj_conv_;
  BatchNorm2d bn1_, bn2_, bn3_, proj_bn_;
  Rectifier act1_, act2_, act_out_;
  MaxPool2x2 pool_;
  bool has_projection_ = false;
};

using Block = std::variant<ConvBlock, ResidualBlock>;

// Generic embedding network. Maps a batch of images (NCHW) to a batch of
// embeddings (N x c' x h' x w'); the flat embedding of one instance is its
// contiguous c'h'w' slice, i.e. channel-major (k, u, v) order.
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(BackboneConfig config);

  void init(std::uint64_t seed);
  Tensor forward(const Tensor& images, Mode mode);
  Tensor backward(const Tensor& d_embeddings);

  // Throws ConfigError naming the block whose pooling would collapse to zero.
  EmbeddingShape output_shape(std::size_t height, std::size_t width) const;
  std::size_t parameter_count() const;

  std::vector<ParamRef> params(const std::string& prefix = "backbone");
  std::vector<BufferRef> buffers(const std::string& prefix = "backbone");

  const BackboneConfig& config() const noexcept { return config_; }
  std::vector<Block>& blocks() noexcept { return blocks_; }

 private:
  BackboneConfig config_;
  std::vector<Block> blocks_;
};

// Closed-form parameter count of a backbone (weights, BN scale and shift).
std::size_t analytic_parameter_count(const BackboneConfig& config);

}  // namespace eaen
