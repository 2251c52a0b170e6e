#include "eaen/model.hpp"

namespace eaen {

std::string to_string(SupportStrategy s) {
  return s == SupportStrategy::kSemiSupervised ? "semi" : "supervised";
}

SupportStrategy parse_strategy(const std::string& s) {
  if (s == "semi") return SupportStrategy::kSemiSupervised;
  if (s == "supervised") return SupportStrategy::kSupervised;
  throw ConfigError("unknown support strategy '" + s + "' (semi, supervised)");
}

namespace {

void copy_into(Tensor& dst, const double* src) {
  std::copy(src, src + dst.size(), dst.data());
}

void add_into(Tensor& dst, const double* src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.spec.validate();
  config_.backbone.in_channels = config_.image_shape.channels;
  backbone_ = Backbone(config_.backbone);
  backbone_.init(config_.seed);
  m_ = backbone_.output_shape(config_.image_shape.height, config_.image_shape.width).flat();

  const auto& spec = config_.spec;
  shape_.n_way = spec.n_way;
  shape_.query_per_class = spec.t_query;
  shape_.support_per_class = config_.strategy == SupportStrategy::kSupervised
                                 ? spec.labeled_per_class()
                                 : spec.k_shot;

  if (config_.adapt_mode != AdaptMode::kOff) {
    const AdaptParams p =
        build_adapter(shape_, config_.adapt_mode, config_.adapt_d, config_.adapt_f,
                      config_.hidden_activation, config_.output_activation, config_.seed);
    wp_ = Parameter({p.d(), p.n()});
    wz_ = Parameter({p.f(), p.d()});
    wa_ = Parameter({p.f()});
    copy_into(wp_.value, p.wp.data());
    copy_into(wz_.value, p.wz.data());
    copy_into(wa_.value, p.wa.data());
  }
  if (config_.classifier == ClassifierKind::kTpn) {
    tpn_scale_ = Parameter({m_});
    tpn_scale_.value.fill(1.0);
  }
}

std::size_t Model::adapter_n() const {
  return config_.adapt_mode == AdaptMode::kOff ? 0 : wp_.value.dim(1);
}

AdaptParams Model::adapt_params() const {
  AdaptParams p;
  p.mode = config_.adapt_mode;
  p.hidden = config_.hidden_activation;
  p.output = config_.output_activation;
  if (config_.adapt_mode == AdaptMode::kOff) return p;
  const auto d = static_cast<Eigen::Index>(wp_.value.dim(0));
  const auto n = static_cast<Eigen::Index>(wp_.value.dim(1));
  const auto f = static_cast<Eigen::Index>(wz_.value.dim(0));
  p.wp = Eigen::Map<const RowMajorMatrix>(wp_.value.data(), d, n);
  p.wz = Eigen::Map<const RowMajorMatrix>(wz_.value.data(), f, d);
  p.wa = Eigen::Map<const Vector>(wa_.value.data(), f);
  return p;
}

std::vector<ParamRef> Model::params() {
  auto out = backbone_.params();
  if (config_.adapt_mode != AdaptMode::kOff) {
    out.push_back({"adapter.wp", &wp_});
    out.push_back({"adapter.wz", &wz_});
    out.push_back({"adapter.wa", &wa_});
  }
  if (config_.classifier == ClassifierKind::kTpn) out.push_back({"classifier.tpn.scale", &tpn_scale_});
  return out;
}

std::vector<BufferRef> Model::buffers() { return backbone_.buffers(); }

void Model::zero_grad() {
  for (auto& p : params()) p.param->zero_grad();
}

Episode Model::prepare(const Episode& episode) const {
  Episode ep = config_.strategy == SupportStrategy::kSupervised ? drop_unlabeled_support(episode)
                                                                 : episode;
  if (ep.n_way != shape_.n_way || ep.support.size() != shape_.n_way * shape_.support_per_class ||
      ep.query.size() != shape_.n_way * shape_.query_per_class) {
    const auto& s = config_.spec;
    throw ContractError(
        "episode with N=" + std::to_string(ep.n_way) +
        ", support=" + std::to_string(ep.support.size()) +
        ", query=" + std::to_string(ep.query.size()) +
        " does not match the model's stored shape (N=" + std::to_string(s.n_way) +
        ", K=" + std::to_string(s.k_shot) + ", T=" + std::to_string(s.t_query) +
        ", strategy=" + to_string(config_.strategy) +
        "); the adapter is tied to one episode size, so train and evaluate with the same "
        "n_way/k_shot/t_query");
  }
  return ep;
}

EpisodeOutput Model::forward(const Episode& episode, Mode mode) {
  return run(episode, mode, false);
}

EpisodeOutput Model::forward_backward(const Episode& episode) {
  return run(episode, Mode::kTrain, true);
}

EpisodeOutput Model::run(const Episode& raw, Mode mode, bool backward) {
  const Episode ep = prepare(raw);
  const Tensor batch = episode_batch(ep);
  if (!(ep.support.front().instance.image->shape == config_.image_shape)) {
    throw DataError("episode images are " + to_string(ep.support.front().instance.image->shape) +
                    ", model expects " + to_string(config_.image_shape));
  }
  const Tensor emb = backbone_.forward(batch, mode);
  const auto m = static_cast<Eigen::Index>(m_);
  const auto n = static_cast<Eigen::Index>(ep.size());
  const auto ns = static_cast<Eigen::Index>(ep.support.size());
  const auto nq = static_cast<Eigen::Index>(ep.query.size());

  EpisodeOutput out;
  out.generic = Eigen::Map<const Matrix>(emb.data(), m, n);

  const bool adapting = config_.adapt_mode != AdaptMode::kOff && !force_unit_;
  AdaptParams ap;
  AdaptCaches caches;
  if (adapting) {
    ap = adapt_params();
    const Eigen::Index n_in = static_cast<Eigen::Index>(ap.n());
    auto res = adapt_forward(out.generic.leftCols(n_in), ap);
    out.adaptive = std::move(res.a);
    caches = std::move(res.caches);
    out.adapted = apply_adaptation(out.adaptive, out.generic);
  } else {
    out.adaptive = Vector::Ones(m);
    out.adapted = out.generic;
  }

  std::vector<std::size_t> s_labels;
  std::vector<bool> s_flags;
  for (const auto& item : ep.support) {
    s_labels.push_back(item.label);
    s_flags.push_back(item.labeled);
  }
  const auto q_labels = ep.query_labels();
  const Matrix e_s = out.adapted.leftCols(ns);
  const Matrix e_q = out.adapted.rightCols(nq);

  Prototypes protos;
  PropagationConfig pcfg;
  PropagationResult prop;
  if (config_.classifier == ClassifierKind::kProto) {
    protos = compute_prototypes(e_s, s_labels, s_flags, ep.n_way);
    out.logits = proto_logits(e_q, protos, config_.distance);
  } else {
    pcfg.alpha = config_.tpn_alpha;
    pcfg.graph_k = config_.tpn_graph_k;
    pcfg.scale = Eigen::Map<const Vector>(tpn_scale_.value.data(), m);
    prop = label_propagate(e_s, e_q, s_labels, s_flags, ep.n_way, pcfg);
    out.logits = prop.z.bottomRows(nq);
  }
  out.probs = softmax_rows(out.logits);
  out.predictions = predict(out.probs);
  out.loss = cross_entropy(out.probs, q_labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < q_labels.size(); ++i) correct += out.predictions[i] == q_labels[i];
  out.accuracy = q_labels.empty() ? 0.0 : static_cast<double>(correct) / q_labels.size();
  if (!backward) return out;

  const Matrix d_logits = cross_entropy_grad(out.probs, q_labels);
  Matrix d_e(m, n);
  if (config_.classifier == ClassifierKind::kProto) {
    const auto g = proto_backward(e_s, e_q, protos, s_labels, s_flags, d_logits, config_.distance);
    d_e.leftCols(ns) = g.support;
    d_e.rightCols(nq) = g.query;
  } else {
    const auto g = label_propagate_backward(prop, pcfg, d_logits);
    d_e = g.e;
    add_into(tpn_scale_.grad, g.scale.data());
  }

  Matrix d_g;
  if (adapting) {
    const auto g = adapt_backward(caches, out.generic, ap, d_e);
    add_into(wp_.grad, g.wp.data());
    add_into(wz_.grad, g.wz.data());
    add_into(wa_.grad, g.wa.data());
    d_g = g.g;
  } else {
    d_g = out.adaptive.asDiagonal() * d_e;
  }
  Tensor d_emb(emb.shape());
  std::copy(d_g.data(), d_g.data() + d_g.size(), d_emb.data());
  backbone_.backward(d_emb);
  return out;
}

}  // namespace eaen
