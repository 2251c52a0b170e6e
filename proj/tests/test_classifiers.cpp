#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "eaen/classifiers.hpp"
#include "eaen/gradcheck.hpp"
#include "eaen/rng.hpp"

using namespace eaen;

namespace {

Matrix random_matrix(Eigen::Index m, Eigen::Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix g(m, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
  return g;
}

Matrix logits_from_distances(std::initializer_list<double> d) {
  Matrix l(1, static_cast<Eigen::Index>(d.size()));
  Eigen::Index i = 0;
  for (double v : d) l(0, i++) = -v;
  return l;
}

// Plain Gauss-Jordan inverse with partial pivoting.
Matrix gauss_jordan_inverse(Matrix a) {
  const Eigen::Index n = a.rows();
  Matrix inv = Matrix::Identity(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index piv = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    a.row(c).swap(a.row(piv));
    inv.row(c).swap(inv.row(piv));
    const double d = a(c, c);
    a.row(c) /= d;
    inv.row(c) /= d;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      a.row(r) -= f * a.row(c);
      inv.row(r) -= f * inv.row(c);
    }
  }
  return inv;
}

}  // namespace

TEST(Prototypes, MeanOfTwoPoints) {
  Matrix es(2, 2);
  es << 1, 0, 0, 1;
  const auto p = compute_prototypes(es, {0, 0}, {true, true}, 1);
  EXPECT_EQ(p.centers(0, 0), 0.5);
  EXPECT_EQ(p.centers(1, 0), 0.5);
  EXPECT_EQ(p.counts[0], 2u);
}

TEST(Prototypes, SingleShotIsIdentity) {
  Rng rng = make_rng(1);
  const Matrix es = random_matrix(6, 3, rng);
  const auto p = compute_prototypes(es, {0, 1, 2}, {true, true, true}, 3);
  EXPECT_EQ(p.centers, es);
}

TEST(Prototypes, DividesByLabeledCount) {
  Rng rng = make_rng(2);
  const Matrix es = random_matrix(4, 10, rng);
  std::vector<std::size_t> labels;
  std::vector<bool> flags;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t s = 0; s < 5; ++s) {
      labels.push_back(c);
      flags.push_back(s == 3);
    }
  const auto p = compute_prototypes(es, labels, flags, 2);
  EXPECT_EQ(p.centers.col(0), es.col(3));
  EXPECT_EQ(p.centers.col(1), es.col(8));
  EXPECT_EQ(p.counts, (std::vector<std::size_t>{1, 1}));
}

TEST(Prototypes, ClassWithoutLabelsIsProtocolError) {
  Matrix es = Matrix::Ones(2, 4);
  try {
    compute_prototypes(es, {0, 0, 1, 1}, {true, true, false, false}, 2);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(ProtoProbabilities, DistancesZeroAndOne) {
  const auto probs = softmax_rows(logits_from_distances({0.0, 1.0})).probs();
  const double e1 = std::exp(-1.0);
  EXPECT_NEAR(probs(0, 0), 1.0 / (1.0 + e1), 1e-15);
  EXPECT_NEAR(probs(0, 1), e1 / (1.0 + e1), 1e-15);
  EXPECT_NEAR(probs(0, 0), 0.73106, 5e-6);
  EXPECT_NEAR(probs(0, 1), 0.26894, 5e-6);
}

TEST(ProtoProbabilities, PlainEuclideanDistance) {
  Matrix c(2, 2), q(2, 1);
  c << 0, 3, 0, 4;
  q << 0, 0;
  const auto logits = proto_logits(q, {c, {1, 1}});
  EXPECT_EQ(logits(0, 0), 0.0);
  EXPECT_EQ(logits(0, 1), -5.0);
  const auto sq = proto_logits(q, {c, {1, 1}}, Distance::kSquaredEuclidean);
  EXPECT_EQ(sq(0, 1), -25.0);
}

TEST(ProtoProbabilities, EquidistantQueryIsUniform) {
  Matrix c(2, 4), q(2, 1);
  c << 1, -1, 0, 0, 0, 0, 1, -1;
  q << 0, 0;
  const auto probs = proto_probabilities(q, {c, {1, 1, 1, 1}}).probs();
  for (int t = 0; t < 4; ++t) EXPECT_NEAR(probs(0, t), 0.25, 1e-15);
  EXPECT_EQ(predict(proto_probabilities(q, {c, {1, 1, 1, 1}})), (std::vector<std::size_t>{0}));
}

TEST(ProtoProbabilities, ExtremeDistancesStayFinite) {
  const auto cp = softmax_rows(logits_from_distances({0.0, 1000.0}));
  const Matrix p = cp.probs();
  EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_GE(p(0, 1), 0.0);
  EXPECT_LT(p(0, 1), 1e-300);
  EXPECT_TRUE(cp.log_probs.allFinite());
  EXPECT_EQ(cp.log_probs(0, 1), -1000.0);
}

TEST(ProtoProbabilities, NonFiniteEmbeddingNamesQuery) {
  Matrix c = Matrix::Zero(2, 2), q = Matrix::Zero(2, 3);
  q(1, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    proto_logits(q, {c, {1, 1}});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("query 2"), std::string::npos) << e.what();
  }
}

TEST(ProtoProbabilities, RowsSumToOneAndTranslationInvariance) {
  Rng rng = make_rng(3);
  for (int t = 0; t < 200; ++t) {
    const Matrix es = random_matrix(6, 4, rng, 3.0), eq = random_matrix(6, 5, rng, 3.0);
    const std::vector<std::size_t> labels{0, 1, 2, 3};
    const std::vector<bool> flags(4, true);
    const Matrix p = proto_probabilities(eq, compute_prototypes(es, labels, flags, 4)).probs();
    for (int i = 0; i < 5; ++i) {
      ASSERT_NEAR(p.row(i).sum(), 1.0, 1e-6);
      ASSERT_GE(p.row(i).minCoeff(), 0.0);
      ASSERT_LE(p.row(i).maxCoeff(), 1.0);
    }
    const Matrix shift = random_matrix(6, 1, rng, 10.0);
    const Matrix es2 = es.colwise() + shift.col(0), eq2 = eq.colwise() + shift.col(0);
    const Matrix p2 = proto_probabilities(eq2, compute_prototypes(es2, labels, flags, 4)).probs();
    ASSERT_LT((p - p2).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Predict, ArgmaxEqualsNearestPrototype) {
  Rng rng = make_rng(4);
  for (int t = 0; t < 1000; ++t) {
    const Matrix centers = random_matrix(5, 3, rng), q = random_matrix(5, 1, rng);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < 3; ++c) {
      double d = 0;
      for (int k = 0; k < 5; ++k) d += (q(k, 0) - centers(k, c)) * (q(k, 0) - centers(k, c));
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::size_t>(c);
      }
    }
    ASSERT_EQ(predict(proto_probabilities(q, {centers, {1, 1, 1}}))[0], best);
  }
}

TEST(Predict, TiesAndUniformScaling) {
  ClassProbabilities cp{Matrix(2, 2)};
  cp.log_probs << std::log(0.7), std::log(0.3), std::log(0.5), std::log(0.5);
  EXPECT_EQ(predict(cp), (std::vector<std::size_t>{0, 0}));

  Rng rng = make_rng(5);
  for (int t = 0; t < 100; ++t) {
    const Matrix es = random_matrix(4, 3, rng), eq = random_matrix(4, 6, rng);
    const std::vector<std::size_t> labels{0, 1, 2};
    const std::vector<bool> flags(3, true);
    const auto base = predict(proto_probabilities(eq, compute_prototypes(es, labels, flags, 3)));
    const double s = 0.05 + 3.0 * std::abs(random_matrix(1, 1, rng)(0, 0));
    const auto scaled = predict(
        proto_probabilities(s * eq, compute_prototypes(s * es, labels, flags, 3)));
    ASSERT_EQ(base, scaled);
  }
}

TEST(CrossEntropy, Examples) {
  for (std::size_t n : {2, 5, 7}) {
    ClassProbabilities u{Matrix::Constant(3, static_cast<Eigen::Index>(n),
                                          -std::log(static_cast<double>(n)))};
    EXPECT_NEAR(cross_entropy(u, {0, 1, 1}), std::log(static_cast<double>(n)), 1e-9);
  }
  ClassProbabilities uniform5 = softmax_rows(Matrix::Zero(4, 5));
  EXPECT_NEAR(cross_entropy(uniform5, {0, 1, 2, 3}), 1.6094379124341003, 1e-9);

  ClassProbabilities onehot{Matrix(1, 2)};
  onehot.log_probs << 0.0, -std::numeric_limits<double>::infinity();
  EXPECT_EQ(cross_entropy(onehot, {0}), 0.0);

  ClassProbabilities two{Matrix(2, 2)};
  two.log_probs << std::log(0.5), std::log(0.5), std::log(0.75), std::log(0.25);
  EXPECT_NEAR(cross_entropy(two, {0, 1}), -(std::log(0.5) + std::log(0.25)) / 2.0, 1e-15);
  EXPECT_NEAR(cross_entropy(two, {0, 1}), 1.03972, 5e-6);
}

TEST(CrossEntropy, ZeroProbabilityIsCapped) {
  ClassProbabilities cp{Matrix(2, 2)};
  cp.log_probs << 0.0, -std::numeric_limits<double>::infinity(), std::log(0.5), std::log(0.5);
  const double loss = cross_entropy(cp, {1, 0});
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, (kCrossEntropyCap + std::log(2.0)) / 2.0, 1e-9);
  const Matrix g = cross_entropy_grad(cp, {1, 0});
  EXPECT_EQ(g.row(0).norm(), 0.0);
  EXPECT_GT(g.row(1).norm(), 0.0);
}

TEST(ProtoBackward, MatchesFiniteDifferences) {
  Rng rng = make_rng(6);
  Parameter s({4 * 6}), q({4 * 4});
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto* p : {&s, &q})
    for (auto& v : p->value.values()) v = nd(rng);
  const std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1}, qlabels{0, 1, 1, 0};
  const std::vector<bool> flags{true, false, true, true, true, false};
  for (auto dist : {Distance::kEuclidean, Distance::kSquaredEuclidean}) {
    auto run = [&](bool grad) {
      const Matrix es = Eigen::Map<const Matrix>(s.value.data(), 4, 6);
      const Matrix eq = Eigen::Map<const Matrix>(q.value.data(), 4, 4);
      const auto protos = compute_prototypes(es, labels, flags, 2);
      const auto probs = softmax_rows(proto_logits(eq, protos, dist));
      if (grad) {
        const auto g = proto_backward(es, eq, protos, labels, flags,
                                      cross_entropy_grad(probs, qlabels), dist);
        std::copy(g.support.data(), g.support.data() + g.support.size(), s.grad.data());
        std::copy(g.query.data(), g.query.data() + g.query.size(), q.grad.data());
        // Unlabeled support never reaches the loss.
        EXPECT_EQ(g.support.col(1).norm(), 0.0);
        EXPECT_EQ(g.support.col(5).norm(), 0.0);
      }
      return cross_entropy(probs, qlabels);
    };
    const auto res = check_gradients({{"support", &s}, {"query", &q}},
                                     [&] { return run(false); }, [&] { run(true); });
    EXPECT_TRUE(res.passed) << to_string(dist) << " " << res.worst_tensor << " "
                            << res.max_rel_error;
  }
}

TEST(ProtoBackward, ZeroDistanceHasZeroSubgradient) {
  Matrix es(2, 2), eq(2, 1);
  es << 1, 3, 2, 5;
  eq << 1, 2;  // coincides with prototype 0
  const std::vector<std::size_t> labels{0, 1};
  const std::vector<bool> flags{true, true};
  const auto protos = compute_prototypes(es, labels, flags, 2);
  const auto probs = softmax_rows(proto_logits(eq, protos));
  const auto g = proto_backward(es, eq, protos, labels, flags, cross_entropy_grad(probs, {0}));
  EXPECT_TRUE(g.query.allFinite());
  EXPECT_TRUE(g.support.allFinite());
}

namespace {

struct Fixture5 {
  Matrix es, eq;
  std::vector<std::size_t> labels{0, 0, 1};
  std::vector<bool> flags{true, true, true};
};

Fixture5 five_nodes() {
  Fixture5 f;
  f.es.resize(2, 3);
  f.eq.resize(2, 2);
  f.es << 0.0, 0.3, 2.0, 0.0, 0.2, 2.1;
  f.eq << 0.1, 1.8, -0.1, 2.3;
  return f;
}

}  // namespace

TEST(LabelPropagation, MatchesDenseInversionOracle) {
  const auto f = five_nodes();
  for (double alpha : {0.1, 0.5, 0.99}) {
    PropagationConfig cfg;
    cfg.alpha = alpha;
    cfg.scale = Vector::Constant(2, 1.3);
    const auto r = label_propagate(f.es, f.eq, f.labels, f.flags, 2, cfg);

    Matrix e(2, 5);
    e << f.es, f.eq;
    Matrix w = Matrix::Zero(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        if (i == j) continue;
        double sq = 0;
        for (int k = 0; k < 2; ++k) sq += std::pow(1.3 * (e(k, i) - e(k, j)), 2);
        w(i, j) = std::exp(-sq / (2.0 * 2.0));
      }
    Matrix wn(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) wn(i, j) = w(i, j) / std::sqrt(w.row(i).sum() * w.row(j).sum());
    Matrix y0 = Matrix::Zero(5, 2);
    y0(0, 0) = y0(1, 0) = y0(2, 1) = 1.0;
    const Matrix z = gauss_jordan_inverse(Matrix::Identity(5, 5) - alpha * wn) * y0;
    EXPECT_LT((r.z - z).cwiseAbs().maxCoeff(), 1e-6) << "alpha " << alpha;
    const Matrix p = r.query.probs();
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(LabelPropagation, SmallAlphaReturnsSeedLabels) {
  const auto f = five_nodes();
  PropagationConfig cfg;
  cfg.alpha = 1e-12;
  const auto r = label_propagate(f.es, f.eq, f.labels, f.flags, 2, cfg);
  Matrix y0 = Matrix::Zero(5, 2);
  y0(0, 0) = y0(1, 0) = y0(2, 1) = 1.0;
  EXPECT_LT((r.z - y0).cwiseAbs().maxCoeff(), 1e-9);
  const Matrix p = r.query.probs();
  EXPECT_LT((p.array() - 0.5).abs().maxCoeff(), 1e-9);
}

TEST(LabelPropagation, DuplicatedSupportQueryWithOneNeighbour) {
  Matrix es(3, 3), eq(3, 2);
  es << 0, 4, 9, 1, -2, 3, 0, 0, 1;
  eq.col(0) = es.col(1);
  eq.col(1) = es.col(2);
  PropagationConfig cfg;
  cfg.graph_k = 1;
  const auto r = label_propagate(es, eq, {0, 1, 2}, {true, true, true}, 3, cfg);
  EXPECT_EQ(predict(r.query), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(r.mask(3, 1), 1.0);
  EXPECT_EQ(r.mask(1, 3), 1.0);
}

TEST(LabelPropagation, SupportOnlyGraphKeepsOwnLabels) {
  Rng rng = make_rng(9);
  for (int t = 0; t < 20; ++t) {
    const Matrix es = random_matrix(3, 5, rng);
    const std::vector<std::size_t> labels{0, 1, 2, 3, 4};
    PropagationConfig cfg;
    cfg.alpha = 0.5;
    const auto r = label_propagate(es, Matrix(3, 0), labels, std::vector<bool>(5, true), 5, cfg);
    for (int i = 0; i < 5; ++i) {
      Eigen::Index arg;
      r.z.row(i).maxCoeff(&arg);
      ASSERT_EQ(arg, i);
    }
  }
}

TEST(LabelPropagation, AlphaOutsideRangeRejected) {
  const auto f = five_nodes();
  for (double alpha : {0.0, 1.0, -0.2, 1.5}) {
    PropagationConfig cfg;
    cfg.alpha = alpha;
    EXPECT_THROW(label_propagate(f.es, f.eq, f.labels, f.flags, 2, cfg), ConfigError);
  }
}

TEST(LabelPropagation, BackwardMatchesFiniteDifferences) {
  for (std::size_t k : {0, 2}) {
    Rng rng = make_rng(10 + k);
    Parameter e({3 * 6}), scale({3});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : e.value.values()) v = nd(rng);
    for (auto& v : scale.value.values()) v = 1.0 + 0.2 * nd(rng);
    const std::vector<std::size_t> labels{0, 1, 1}, ql{0, 1, 0};
    const std::vector<bool> flags{true, true, false};
    auto run = [&](bool grad) {
      const Matrix all = Eigen::Map<const Matrix>(e.value.data(), 3, 6);
      PropagationConfig cfg;
      cfg.alpha = 0.8;
      cfg.graph_k = k;
      cfg.scale = Eigen::Map<const Vector>(scale.value.data(), 3);
      const auto r = label_propagate(all.leftCols(3), all.rightCols(3), labels, flags, 2, cfg);
      const auto probs = softmax_rows(r.z.bottomRows(3));
      if (grad) {
        const auto g = label_propagate_backward(r, cfg, cross_entropy_grad(probs, ql));
        std::copy(g.e.data(), g.e.data() + g.e.size(), e.grad.data());
        std::copy(g.scale.data(), g.scale.data() + g.scale.size(), scale.grad.data());
      }
      return cross_entropy(probs, ql);
    };
    const auto res = check_gradients({{"e", &e}, {"scale", &scale}},
                                     [&] { return run(false); }, [&] { run(true); });
    EXPECT_TRUE(res.passed) << "k=" << k << " " << res.worst_tensor << " " << res.max_rel_error;
  }
}
