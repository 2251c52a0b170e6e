#include "eaen/backbone.hpp"

namespace eaen {

namespace {


Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

std::string to_string(Architecture a) {
  return a == Architecture::kConvNet4 ? "convnet4" : "resnet12";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "convnet4") return Architecture::kConvNet4;
  if (s == "resnet12") return Architecture::kResNet12;
  throw ConfigError("unknown backbone '" + s + "' (expected convnet4 or resnet12)");
}

std::vector<std::size_t> BackboneConfig::resolved_channels() const {
  if (!channels.empty()) {
    if (channels.size() != 4) throw ConfigError("backbone needs exactly four block widths");
    return channels;
  }
  if (arch == Architecture::kConvNet4) return {64, 64, 64, 64};
  return {64, 128, 256, 64};
}

ConvBlock::ConvBlock(std::size_t in, std::size_t out) : conv_(in, out, 3), bn_(out) {}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) {
  return relu_.forward(pool_.forward(bn_.forward(conv_.forward(x), mode)));
}

Tensor ConvBlock::backward(const Tensor& dy) {
  return conv_.backward(bn_.backward(pool_.backward(relu_.backward(dy))));
}

void ConvBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  conv_.collect(prefix + ".conv", out);
  bn_.collect(prefix + ".bn", out);
}

void ConvBlock::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  bn_.collect_buffers(prefix + ".bn", out);
}

ResidualBlock::ResidualBlock(std::size_t in, std::size_t out, double slope)
    : conv1_(in, out, 3),
      conv2_(out, out, 3),
      conv3_(out, out, 3),
      bn1_(out),
      bn2_(out),
      bn3_(out),
      act1_(slope),
      act2_(slope),
      act_out_(slope),
      has_projection_(in != out) {
  if (has_projection_) {
    proj_conv_ = Conv2d(in, out, 1);
    proj_bn_ = BatchNorm2d(out);
  }
}

void ResidualBlock::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  if (has_projection_) proj_conv_.init(rng);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = act1_.forward(bn1_.forward(conv1_.forward(x), mode));
  h = act2_.forward(bn2_.forward(conv2_.forward(h), mode));
  h = bn3_.forward(conv3_.forward(h), mode);
  const Tensor shortcut = has_projection_ ? proj_bn_.forward(proj_conv_.forward(x), mode) : x;
  return pool_.forward(act_out_.forward(add(h, shortcut)));
}

Tensor ResidualBlock::backward(const Tensor& dy) {
  const Tensor dsum = act_out_.backward(pool_.backward(dy));
  Tensor dx = conv1_.backward(bn1_.backward(act1_.backward(
      conv2_.backward(bn2_.backward(act2_.backward(conv3_.backward(bn3_.backward(dsum))))))));
  const Tensor dshort = has_projection_ ? proj_conv_.backward(proj_bn_.backward(dsum)) : dsum;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dshort[i];
  return dx;
}

void ResidualBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  conv1_.collect(prefix + ".conv1", out);
  bn1_.collect(prefix + ".bn1", out);
  conv2_.collect(prefix + ".conv2", out);
  bn2_.collect(prefix + ".bn2", out);
  conv3_.collect(prefix + ".conv3", out);
  bn3_.collect(prefix + ".bn3", out);
  if (has_projection_) {
    proj_conv_.collect(prefix + ".shortcut.conv", out);
    proj_bn_.collect(prefix + ".shortcut.bn", out);
  }
}

void ResidualBlock::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  bn1_.collect_buffers(prefix + ".bn1", out);
  bn2_.collect_buffers(prefix + ".bn2", out);
  bn3_.collect_buffers(prefix + ".bn3", out);
  if (has_projection_) proj_bn_.collect_buffers(prefix + ".shortcut.bn", out);
}

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) {
  const auto widths = config_.resolved_channels();
  std::size_t in = config_.in_channels;
  for (std::size_t out : widths) {
    if (config_.arch == Architecture::kConvNet4) {
      blocks_.emplace_back(ConvBlock(in, out));
    } else {
      blocks_.emplace_back(ResidualBlock(in, out, config_.leaky_slope));
    }
    in = out;
  }
}

void Backbone::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xbac0);
  for (auto& b : blocks_) std::visit([&](auto& blk) { blk.init(rng); }, b);
}

Tensor Backbone::forward(const Tensor& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
    throw ContractError("backbone expects NCHW images with " +
                        std::to_string(config_.in_channels) + " channels, got " +
                        images.shape_string());
  }
  output_shape(images.dim(2), images.dim(3));
  Tensor h = images;
  for (auto& b : blocks_) h = std::visit([&](auto& blk) { return blk.forward(h, mode); }, b);
  return h;
}

Tensor Backbone::backward(const Tensor& d_embeddings) {
  Tensor g = d_embeddings;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    g = std::visit([&](auto& blk) { return blk.backward(g); }, *it);
  }
  return g;
}

EmbeddingShape Backbone::output_shape(std::size_t height, std::size_t width) const {
  const auto widths = config_.resolved_channels();
  for (std::size_t i = 0; i < widths.size(); ++i) {
    height /= 2;
    width /= 2;
    if (height == 0 || width == 0) {
      throw ConfigError("input too small: spatial size collapses to zero at block " +
                        std::to_string(i + 1) + " of " + to_string(config_.arch) + " (backbone.block" +
                        std::to_string(i) + ")");
    }
  }
  return {widths.back(), height, width};
}

std::size_t Backbone::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : const_cast<Backbone*>(this)->params()) total += p.param->value.size();
  return total;
}

std::vector<ParamRef> Backbone::params(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string name = prefix + ".block" + std::to_string(i);
    std::visit([&](auto& blk) { blk.collect(name, out); }, blocks_[i]);
  }
  return out;
}

std::vector<BufferRef> Backbone::buffers(const std::string& prefix) {
  std::vector<BufferRef> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string name = prefix + ".block" + std::to_string(i);
    std::visit([&](auto& blk) { blk.collect_buffers(name, out); }, blocks_[i]);
  }
  return out;
}

std::size_t analytic_parameter_count(const BackboneConfig& config) {
  const auto widths = config.resolved_channels();
  std::size_t in = config.in_channels, total = 0;
  for (std::size_t out : widths) {
    if (config.arch == Architecture::kConvNet4) {
      total += 9 * in * out + 2 * out;
    } else {
      total += 9 * (in * out + 2 * out * out) + 3 * 2 * out;
      if (in != out) total += in * out + 2 * out;
    }
    in = out;
  }
  return total;
}

}  // namespace eaen
