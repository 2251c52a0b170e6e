#include <gtest/gtest.h>

#include <cmath>

#include "eaen/model.hpp"

using namespace eaen;

namespace {

const ClassPool& pool16() {
  static const ClassPool pool = [] {
    SyntheticParams p;
    p.num_classes = 6;
    p.per_class = 12;
    p.image_shape = {16, 16, 3};
    return split_pool(make_synthetic_pool(p), 6, 0, 0).train;
  }();
  return pool;
}

ModelConfig small_config(EpisodeSpec spec = {3, 2, 3, 1.0}) {
  ModelConfig mc;
  mc.backbone.channels = {8, 8, 8, 8};
  mc.image_shape = {16, 16, 3};
  mc.spec = spec;
  mc.adapt_d = 8;
  mc.adapt_f = 4;
  mc.seed = 3;
  return mc;
}

Episode episode(const EpisodeSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return draw_episode(pool16(), spec, rng);
}

}  // namespace

TEST(ModelShape, EmbeddingAndAdapterSizes) {
  ModelConfig mc;
  mc.image_shape = {84, 84, 3};
  mc.spec = {5, 1, 15, 1.0};
  Model full(mc);
  EXPECT_EQ(full.embedding_dim(), 1600u);
  EXPECT_EQ(full.adapter_n(), 80u);
  mc.adapt_mode = AdaptMode::kSupportOnly;
  Model support(mc);
  EXPECT_EQ(support.adapter_n(), 5u);
  mc.adapt_mode = AdaptMode::kOff;
  EXPECT_EQ(Model(mc).adapter_n(), 0u);
  mc.image_shape = {32, 32, 3};
  EXPECT_EQ(Model(mc).embedding_dim(), 256u);
  mc.spec = {5, 5, 15, 1.0};
  mc.adapt_mode = AdaptMode::kFullEpisode;
  EXPECT_EQ(Model(mc).adapter_n(), 100u);
}

TEST(ModelShape, SupervisedStrategyDropsUnlabeledColumns) {
  ModelConfig mc = small_config({2, 5, 3, 0.4});
  mc.strategy = SupportStrategy::kSupervised;
  Model sup(mc);
  EXPECT_EQ(sup.adapter_n(), 2u * (2u + 3u));
  mc.strategy = SupportStrategy::kSemiSupervised;
  Model semi(mc);
  EXPECT_EQ(semi.adapter_n(), 2u * (5u + 3u));
  const Episode ep = episode(mc.spec, 1);
  EXPECT_EQ(sup.forward(ep, Mode::kEval).generic.cols(), 10);
  EXPECT_EQ(semi.forward(ep, Mode::kEval).generic.cols(), 16);
}

TEST(ModelShape, MismatchedEpisodeCitesStoredShape) {
  Model model(small_config({3, 2, 3, 1.0}));
  const Episode ep = episode({3, 1, 3, 1.0}, 2);
  try {
    model.forward(ep, Mode::kEval);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("N=3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("K=2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("T=3"), std::string::npos) << msg;
  }
}

TEST(ModelShape, WrongImageSizeIsDataError) {
  ModelConfig mc = small_config();
  mc.image_shape = {32, 32, 3};
  Model model(mc);
  EXPECT_THROW(model.forward(episode(mc.spec, 3), Mode::kEval), DataError);
}

TEST(IdentityEquivalence, UnitAdaptationMatchesVanillaLogits) {
  ModelConfig mc = small_config();
  mc.adapt_mode = AdaptMode::kOff;
  Model proto(mc);
  mc.adapt_mode = AdaptMode::kFullEpisode;
  Model ea(mc);
  ea.set_force_unit_adaptation(true);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Episode ep = episode(mc.spec, 100 + s);
    const auto a = proto.forward(ep, Mode::kEval);
    const auto b = ea.forward(ep, Mode::kEval);
    ASSERT_LT((a.logits - b.logits).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(IdentityEquivalence, InitialUniformAdaptationKeepsPredictions) {
  ModelConfig mc = small_config();
  mc.adapt_mode = AdaptMode::kOff;
  Model proto(mc);
  mc.adapt_mode = AdaptMode::kFullEpisode;
  Model ea(mc);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Episode ep = episode(mc.spec, 300 + s);
    const auto a = proto.forward(ep, Mode::kEval);
    const auto b = ea.forward(ep, Mode::kEval);
    ASSERT_TRUE((b.adaptive.array() == 0.5).all());
    ASSERT_EQ(a.predictions, b.predictions);
    ASSERT_LT((0.5 * a.logits - b.logits).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ModelForward, EvalColumnsDependOnlyOnTheImage) {
  Model model(small_config());
  const auto spec = model.config().spec;
  const Episode e1 = episode(spec, 7);
  Episode e2 = episode(spec, 8);
  e2.query[4] = e1.support[1];
  e2.query[4].label = e2.query[4].label;  // label is irrelevant to the embedding
  const auto o1 = model.forward(e1, Mode::kEval);
  const auto o2 = model.forward(e2, Mode::kEval);
  const Eigen::Index col2 = static_cast<Eigen::Index>(e2.support.size()) + 4;
  EXPECT_EQ(o1.generic.col(1), o2.generic.col(col2));
}

TEST(ModelForward, ForwardBackwardLossMatchesForward) {
  for (auto kind : {ClassifierKind::kProto, ClassifierKind::kTpn}) {
    ModelConfig mc = small_config();
    mc.classifier = kind;
    Model a(mc), b(mc);
    const Episode ep = episode(mc.spec, 9);
    const double l1 = a.forward(ep, Mode::kTrain).loss;
    const auto out = b.forward_backward(ep);
    EXPECT_EQ(l1, out.loss);
    bool any = false;
    for (const auto& p : b.params()) {
      for (double g : p.param->grad.values()) {
        ASSERT_TRUE(std::isfinite(g)) << p.name;
        any = any || g != 0.0;
      }
    }
    EXPECT_TRUE(any);
  }
}

TEST(ModelForward, GradientsAccumulateUntilZeroed) {
  Model model(small_config());
  const Episode ep = episode(model.config().spec, 10);
  model.forward_backward(ep);
  const Tensor once = model.params().front().param->grad;
  model.forward_backward(ep);
  const Tensor twice = model.params().front().param->grad;
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], 2 * once[i], 1e-9);
  model.zero_grad();
  for (double g : model.params().front().param->grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(ModelForward, ParameterNamesAreStable) {
  ModelConfig mc = small_config();
  mc.classifier = ClassifierKind::kTpn;
  Model model(mc);
  std::vector<std::string> names;
  for (const auto& p : model.params()) names.push_back(p.name);
  EXPECT_EQ(names.front(), "backbone.block0.conv.weight");
  EXPECT_NE(std::find(names.begin(), names.end(), "adapter.wp"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "adapter.wz"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "adapter.wa"), names.end());
  EXPECT_EQ(names.back(), "classifier.tpn.scale");
  std::vector<std::string> buffers;
  for (const auto& b : model.buffers()) buffers.push_back(b.name);
  EXPECT_EQ(buffers.front(), "backbone.block0.bn.running_mean");
}

TEST(ModelForward, TrainModeUpdatesOnlyBatchNormBuffers) {
  Model model(small_config());
  const Episode ep = episode(model.config().spec, 11);
  std::vector<Tensor> params;
  for (const auto& p : model.params()) params.push_back(p.param->value);
  const Tensor rm = *model.buffers().front().tensor;
  model.forward(ep, Mode::kTrain);
  EXPECT_NE(rm.values(), model.buffers().front().tensor->values());
  const auto now = model.params();
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_EQ(params[i].values(), now[i].param->value.values());
  const Tensor rm2 = *model.buffers().front().tensor;
  model.forward(ep, Mode::kEval);
  EXPECT_EQ(rm2.values(), model.buffers().front().tensor->values());
}

TEST(ModelForward, SemiSupervisedPrototypesIgnoreUnlabeledSupport) {
  ModelConfig mc = small_config({2, 5, 2, 0.2});
  mc.adapt_mode = AdaptMode::kOff;
  Model model(mc);
  Episode ep = episode(mc.spec, 12);
  const auto base = model.forward(ep, Mode::kEval);
  // Swapping the image of an unlabeled support item changes nothing.
  for (auto& s : ep.support) {
    if (!s.labeled) {
      s.instance = ep.query.back().instance;
      break;
    }
  }
  const auto swapped = model.forward(ep, Mode::kEval);
  EXPECT_EQ(base.logits, swapped.logits);
}

// With no class signal in the pixels the untrained model is close to
// uniform over the N classes. A separable pool is already partly separated by
// the random backbone, so its first loss sits below ln N.
TEST(ModelForward, FirstStepLossIsNearLogN) {
  for (std::size_t n : {2, 3, 5}) {
    ModelConfig mc = small_config({n, 1, 5, 1.0});
    mc.image_shape = {32, 32, 3};
    mc.backbone.channels = {};
    Model model(mc);
    for (double separation : {0.0, 3.0}) {
      SyntheticParams p;
      p.num_classes = 6;
      p.separation = separation;
      const ClassPool pool = split_pool(make_synthetic_pool(p), 6, 0, 0).train;
      double mean = 0;
      for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng = make_rng(s);
        mean += model.forward(draw_episode(pool, mc.spec, rng), Mode::kTrain).loss / 5.0;
      }
      if (separation == 0.0) {
        EXPECT_NEAR(mean, std::log(static_cast<double>(n)), 0.2) << "N=" << n;
      } else {
        EXPECT_LT(mean, std::log(static_cast<double>(n))) << "N=" << n;
      }
    }
  }
}
