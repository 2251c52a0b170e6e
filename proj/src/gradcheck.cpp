#include "eaen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "eaen/adapter.hpp"
#include "eaen/backbone.hpp"
#include "eaen/classifiers.hpp"
#include "eaen/model.hpp"
#include "eaen/rng.hpp"

namespace eaen {

GradCheckResult check_gradients(const std::vector<ParamRef>& params,
                                const std::function<double()>& loss,
                                const std::function<void()>& backward,
                                const GradCheckOptions& options) {
  backward();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.push_back(p.param->grad);
    if (options.perturb != 0.0) {
      for (auto& v : analytic.back().values()) v *= 1.0 + options.perturb;
    }
  }

  Rng rng = make_rng(options.seed, 0);
  GradCheckResult result;
  result.max_rel_error = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& value = params[t].param->value;
    std::vector<std::size_t> idx(value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_per_tensor && idx.size() > options.max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double saved = value[i];
      value[i] = saved + options.step;
      const double up = loss();
      value[i] = saved - options.step;
      const double down = loss();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      double rel = std::abs(a - numeric) / denom;
      if (std::isnan(rel)) rel = INFINITY;
      ++result.checked;
      if (result.worst_tensor.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = params[t].name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  result.passed = result.checked > 0 && result.max_rel_error <= options.tolerance;
  return result;
}

std::string to_string(GradComponent c) {
  switch (c) {
    case GradComponent::kAdapter: return "adapter";
    case GradComponent::kAdapterProto: return "adapter+proto";
    case GradComponent::kConvBlock: return "convnet4-block";
    case GradComponent::kResidualBlock: return "resnet12-block";
    case GradComponent::kTpn: return "tpn";
    case GradComponent::kPipeline: return "pipeline";
  }
  return "?";
}

std::vector<GradComponent> all_grad_components() {
  return {GradComponent::kAdapter,       GradComponent::kAdapterProto, GradComponent::kConvBlock,
          GradComponent::kResidualBlock, GradComponent::kTpn,          GradComponent::kPipeline};
}

GradComponent parse_grad_component(const std::string& s) {
  for (auto c : all_grad_components()) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown gradcheck component '" + s +
                    "' (adapter, adapter+proto, convnet4-block, resnet12-block, tpn, pipeline)");
}

namespace {

Parameter random_parameter(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Parameter p(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& v : p.value.values()) v = normal(rng);
  return p;
}

// Column-major m x n view of a parameter holding an m x n matrix.
Matrix as_matrix(const Parameter& p, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(p.value.data(), rows, cols);
}

RowMajorMatrix as_row_major(const Parameter& p, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const RowMajorMatrix>(p.value.data(), rows, cols);
}

template <typename M>
void store(Parameter& p, const M& g) {
  std::copy(g.data(), g.data() + g.size(), p.grad.data());
}

struct AdapterFixture {
  Eigen::Index m = 6, n = 5, d = 4, f = 3;
  Parameter g, wp, wz, wa;
  Matrix r;

  explicit AdapterFixture(Rng& rng) {
    g = random_parameter({static_cast<std::size_t>(m * n)}, rng);
    wp = random_parameter({static_cast<std::size_t>(d * n)}, rng, 0.5);
    wz = random_parameter({static_cast<std::size_t>(f * d)}, rng, 0.5);
    wa = random_parameter({static_cast<std::size_t>(f)}, rng, 0.5);
    r = Matrix::Random(m, n);
  }

  AdaptParams params() const {
    AdaptParams p;
    p.wp = as_row_major(wp, d, n);
    p.wz = as_row_major(wz, f, d);
    p.wa = Eigen::Map<const Vector>(wa.value.data(), f);
    return p;
  }

  std::vector<ParamRef> refs() {
    return {{"input.g", &g}, {"adapter.wp", &wp}, {"adapter.wz", &wz}, {"adapter.wa", &wa}};
  }

  void store_grads(const AdaptGrads& grads) {
    store(g, grads.g);
    store(wp, grads.wp);
    store(wz, grads.wz);
    store(wa, grads.wa);
  }
};

GradCheckResult check_adapter(const GradCheckOptions& options) {
  Rng rng = make_rng(options.seed, 1);
  AdapterFixture fx(rng);
  auto loss = [&] {
    const Matrix g = as_matrix(fx.g, fx.m, fx.n);
    const auto res = adapt_forward(g, fx.params());
    return (fx.r.array() * apply_adaptation(res.a, g).array()).sum();
  };
  auto backward = [&] {
    const Matrix g = as_matrix(fx.g, fx.m, fx.n);
    const auto p = fx.params();
    const auto res = adapt_forward(g, p);
    fx.store_grads(adapt_backward(res.caches, g, p, fx.r));
  };
  return check_gradients(fx.refs(), loss, backward, options);
}

GradCheckResult check_adapter_proto(const GradCheckOptions& options) {
  Rng rng = make_rng(options.seed, 2);
  AdapterFixture fx(rng);
  // 2-way episode: 2 shots per class (one unlabeled), 1 query per class.
  const std::vector<std::size_t> s_labels{0, 0, 1};
  const std::vector<bool> s_flags{true, false, true};
  const std::vector<std::size_t> q_labels{0, 1};
  auto forward = [&](Matrix* d_e) {
    const Matrix g = as_matrix(fx.g, fx.m, fx.n);
    const auto p = fx.params();
    const auto res = adapt_forward(g, p);
    const Matrix e = apply_adaptation(res.a, g);
    const Matrix e_s = e.leftCols(3), e_q = e.rightCols(2);
    const auto protos = compute_prototypes(e_s, s_labels, s_flags, 2);
    const auto probs = softmax_rows(proto_logits(e_q, protos));
    const double l = cross_entropy(probs, q_labels);
    if (d_e) {
      const auto pg = proto_backward(e_s, e_q, protos, s_labels, s_flags,
                                     cross_entropy_grad(probs, q_labels));
      d_e->resize(fx.m, fx.n);
      d_e->leftCols(3) = pg.support;
      d_e->rightCols(2) = pg.query;
      fx.store_grads(adapt_backward(res.caches, g, p, *d_e));
    }
    return l;
  };
  return check_gradients(
      fx.refs(), [&] { return forward(nullptr); },
      [&] {
        Matrix d_e;
        forward(&d_e);
      },
      options);
}

template <typename BlockT>
GradCheckResult check_block(BlockT block, const GradCheckOptions& options, std::uint64_t stream,
                            std::size_t in_channels) {
  Rng rng = make_rng(options.seed, stream);
  block.init(rng);
  Parameter x = random_parameter({3, in_channels, 4, 4}, rng);
  std::vector<ParamRef> refs{{"input.x", &x}};
  block.collect("block", refs);
  const Tensor probe = block.forward(x.value, Mode::kTrain);
  Tensor r(probe.shape());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : r.values()) v = normal(rng);
  auto loss = [&] {
    const Tensor y = block.forward(x.value, Mode::kTrain);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  auto backward = [&] {
    for (auto& ref : refs) ref.param->zero_grad();
    block.forward(x.value, Mode::kTrain);
    const Tensor dx = block.backward(r);
    std::copy(dx.data(), dx.data() + dx.size(), x.grad.data());
  };
  return check_gradients(refs, loss, backward, options);
}

GradCheckResult check_tpn(const GradCheckOptions& options) {
  Rng rng = make_rng(options.seed, 5);
  const Eigen::Index m = 4, ns = 4, nq = 4;
  Parameter e = random_parameter({static_cast<std::size_t>(m * (ns + nq))}, rng);
  Parameter scale = random_parameter({static_cast<std::size_t>(m)}, rng, 0.2);
  for (auto& v : scale.value.values()) v += 1.0;
  const std::vector<std::size_t> s_labels{0, 0, 1, 1};
  const std::vector<bool> s_flags{true, false, true, true};
  const std::vector<std::size_t> q_labels{0, 0, 1, 1};
  auto forward = [&](bool grad) {
    const Matrix all = as_matrix(e, m, ns + nq);
    PropagationConfig cfg;
    cfg.alpha = 0.9;
    cfg.scale = Eigen::Map<const Vector>(scale.value.data(), m);
    const auto res = label_propagate(all.leftCols(ns), all.rightCols(nq), s_labels, s_flags, 2, cfg);
    const Matrix logits = res.z.bottomRows(nq);
    const auto probs = softmax_rows(logits);
    const double l = cross_entropy(probs, q_labels);
    if (grad) {
      const auto g = label_propagate_backward(res, cfg, cross_entropy_grad(probs, q_labels));
      store(e, g.e);
      store(scale, g.scale);
    }
    return l;
  };
  return check_gradients({{"input.e", &e}, {"classifier.tpn.scale", &scale}},
                         [&] { return forward(false); }, [&] { forward(true); }, options);
}

GradCheckResult check_pipeline(const GradCheckOptions& options) {
  SyntheticParams sp;
  sp.num_classes = 2;
  sp.per_class = 4;
  sp.image_shape = {16, 16, 3};
  sp.seed = options.seed;
  const ClassPool pool = make_synthetic_pool(sp);

  ModelConfig mc;
  mc.backbone.arch = Architecture::kConvNet4;
  mc.backbone.channels = {3, 3, 3, 3};
  mc.image_shape = sp.image_shape;
  mc.spec = {2, 2, 1, 0.5};
  mc.adapt_d = 4;
  mc.adapt_f = 3;
  mc.seed = options.seed;
  Model model(mc);
  // Non-zero output weights so the adaptive vector is not constant.
  for (auto& ref : model.params()) {
    if (ref.name == "adapter.wa") {
      Rng rng = make_rng(options.seed, 6);
      std::normal_distribution<double> normal(0.0, 0.5);
      for (auto& v : ref.param->value.values()) v = normal(rng);
    }
  }
  Rng rng = make_rng(options.seed, 7);
  const Episode ep = draw_episode(pool, mc.spec, rng);
  return check_gradients(
      model.params(), [&] { return model.forward(ep, Mode::kTrain).loss; },
      [&] {
        model.zero_grad();
        model.forward_backward(ep);
      },
      options);
}

}  // namespace

GradCheckResult check_component(GradComponent component, const GradCheckOptions& options) {
  switch (component) {
    case GradComponent::kAdapter: return check_adapter(options);
    case GradComponent::kAdapterProto: return check_adapter_proto(options);
    case GradComponent::kConvBlock: return check_block(ConvBlock(2, 3), options, 3, 2);
    case GradComponent::kResidualBlock:
      return check_block(ResidualBlock(2, 3, 0.1), options, 4, 2);
    case GradComponent::kTpn: return check_tpn(options);
    case GradComponent::kPipeline: return check_pipeline(options);
  }
  throw ConfigError("unknown gradcheck component");
}

}  // namespace eaen
