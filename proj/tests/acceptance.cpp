// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include <json.hpp>

#include "eaen/config.hpp"
#include "eaen/evaluation.hpp"
#include "eaen/gradcheck.hpp"
#include "eaen/training.hpp"

using namespace eaen;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const char* kDeskConfig =
    "data.source = synthetic\n"
    "data.image_size = 32x32x3\n"
    "data.synth.classes = 10\n"
    "data.synth.per_class = 50\n"
    "data.synth.separation = 3.0\n"
    "episode.n_way = 2\n"
    "episode.k_shot = 1\n"
    "episode.t_query = 5\n"
    "model.backbone = convnet4\n"
    "model.classifier = proto\n"
    "model.adapt_mode = full_episode\n"
    "train.iterations = 1000\n"
    "train.val_cadence = 250\n"
    "train.val_episodes = 50\n"
    "eval.episodes = 200\n";

ExperimentConfig desk_config() { return ExperimentConfig::parse(kDeskConfig, "desk"); }

Matrix random_matrix(Eigen::Index m, Eigen::Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix g(m, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
  return g;
}

AdaptParams random_adapter(std::size_t n, std::size_t d, std::size_t f, Rng& rng,
                           double sd = 0.7) {
  AdaptParams p;
  p.wp = random_matrix(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n), rng, sd);
  p.wz = random_matrix(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(d), rng, sd);
  p.wa = random_matrix(static_cast<Eigen::Index>(f), 1, rng, sd).col(0);
  return p;
}

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

std::vector<nlohmann::json> records_without_wall_time(const fs::path& log) {
  auto records = read_records(log);
  for (auto& r : records) r.erase("wall_time");
  return records;
}

// 1 ------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name, failed;
  for (GradComponent c : all_grad_components()) {
    const auto r = check_component(c);
    if (r.max_rel_error > worst || std::isnan(r.max_rel_error)) {
      worst = r.max_rel_error;
      worst_name = to_string(c) + ":" + r.worst_tensor;
    }
    if (!(r.max_rel_error < 1e-4)) failed += " " + to_string(c);
  }
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = failed.empty() && secs < 60.0;
  o.detail = fmt("max rel err %.2e", worst) + " (" + worst_name + "), " + fmt("%.2f s", secs) +
             (failed.empty() ? "" : "; failing:" + failed);
  return o;
}

// 2 ------------------------------------------------------------------------

Outcome identity_equivalence(const PoolSet& pools) {
  ModelConfig mc;
  mc.image_shape = {32, 32, 3};
  mc.spec = {5, 1, 15, 1.0};
  mc.adapt_mode = AdaptMode::kOff;
  Model proto(mc);
  mc.adapt_mode = AdaptMode::kFullEpisode;
  Model unit(mc);
  unit.set_force_unit_adaptation(true);
  Model uniform(mc);
  double max_diff = 0.0;
  std::size_t prediction_mismatches = 0;
  bool uniform_a = true;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng = make_rng(4242, s);
    const Episode ep = draw_episode(pools.train, mc.spec, rng);
    const auto a = proto.forward(ep, Mode::kEval);
    const auto b = unit.forward(ep, Mode::kEval);
    const auto c = uniform.forward(ep, Mode::kEval);
    max_diff = std::max(max_diff, (a.logits - b.logits).cwiseAbs().maxCoeff());
    prediction_mismatches += a.predictions != c.predictions;
    uniform_a = uniform_a && (c.adaptive.array() == 0.5).all();
  }
  Outcome o;
  o.pass = max_diff <= 1e-6 && prediction_mismatches == 0 && uniform_a;
  o.detail = fmt("unit-a max |logit diff| %.2e over 100 episodes; ", max_diff) +
             std::to_string(prediction_mismatches) + " prediction mismatches at a = 0.5";
  return o;
}

// 3 ------------------------------------------------------------------------

Outcome shape_contracts() {
  ModelConfig mc;
  mc.image_shape = {84, 84, 3};
  mc.spec = {5, 1, 15, 1.0};
  Model big(mc);
  mc.adapt_mode = AdaptMode::kSupportOnly;
  Model support_only(mc);
  mc.adapt_mode = AdaptMode::kFullEpisode;
  mc.image_shape = {32, 32, 3};
  Model small(mc);
  const std::size_t m84 = big.embedding_dim(), m32 = small.embedding_dim();
  const std::size_t n = big.adapter_n(), ns = support_only.adapter_n();
  Outcome o;
  o.pass = m84 == 1600 && m32 == 256 && n == 80 && ns == 5;
  o.detail = "m(84x84x3)=" + std::to_string(m84) + " m(32x32x3)=" + std::to_string(m32) +
             " n=" + std::to_string(n) + " n_s=" + std::to_string(ns);
  return o;
}

// 4 ------------------------------------------------------------------------

Outcome classifier_properties() {
  Rng rng = make_rng(404);
  double row_err = 0.0, shift_err = 0.0, ce_err = 0.0;
  std::size_t argmax_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index m = 8, n_way = 5, nq = 6;
    const Matrix es = random_matrix(m, n_way, rng, 3.0), eq = random_matrix(m, nq, rng, 3.0);
    std::vector<std::size_t> labels(n_way);
    std::iota(labels.begin(), labels.end(), 0);
    const std::vector<bool> flags(n_way, true);
    const auto protos = compute_prototypes(es, labels, flags, n_way);
    const auto cp = proto_probabilities(eq, protos);
    const Matrix p = cp.probs();
    for (Eigen::Index i = 0; i < nq; ++i) row_err = std::max(row_err, std::abs(p.row(i).sum() - 1.0));

    const Vector shift = random_matrix(m, 1, rng, 10.0).col(0);
    const Matrix es2 = es.colwise() + shift, eq2 = eq.colwise() + shift;
    const Matrix p2 = proto_probabilities(eq2, compute_prototypes(es2, labels, flags, n_way)).probs();
    shift_err = std::max(shift_err, (p - p2).cwiseAbs().maxCoeff());

    const auto pred = predict(cp);
    for (Eigen::Index i = 0; i < nq; ++i) {
      std::size_t best = 0;
      double best_d = INFINITY;
      for (Eigen::Index c = 0; c < n_way; ++c) {
        const double d = (eq.col(i) - es.col(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<std::size_t>(c);
        }
      }
      argmax_mismatch += pred[static_cast<std::size_t>(i)] != best;
    }
  }
  for (std::size_t n : {2u, 5u, 10u, 20u}) {
    const auto uniform = softmax_rows(Matrix::Zero(7, static_cast<Eigen::Index>(n)));
    std::vector<std::size_t> labels(7);
    for (std::size_t i = 0; i < 7; ++i) labels[i] = i % n;
    ce_err = std::max(ce_err, std::abs(cross_entropy(uniform, labels) - std::log(double(n))));
  }
  Outcome o;
  o.pass = row_err <= 1e-6 && shift_err <= 1e-6 && argmax_mismatch == 0 && ce_err <= 1e-9;
  o.detail = fmt("row-sum err %.1e, translation err %.1e, uniform CE err %.1e, ", row_err,
                 shift_err, ce_err) +
             std::to_string(argmax_mismatch) + " argmax/argmin mismatches in 6000 queries";
  return o;
}

// 5 ------------------------------------------------------------------------

Outcome adapter_properties() {
  constexpr int kTrials = 200;
  Rng rng = make_rng(505);
  std::normal_distribution<double> nd(0.0, 1.0);
  int ratio_fail = 0, row_fail = 0, perm_fail = 0, const_fail = 0, bound_fail = 0;
  for (int t = 0; t < kTrials; ++t) {
    const Matrix g = random_matrix(6, 5, rng);
    const AdaptParams p = random_adapter(5, 4, 3, rng);
    const auto r = adapt_forward(g, p);
    const Matrix e = apply_adaptation(r.a, g);
    for (Eigen::Index k = 0; k < 6; ++k)
      for (Eigen::Index j = 0; j < 5; ++j)
        if (std::abs(e(k, j) - r.a(k) * g(k, j)) > 1e-12 * (1.0 + std::abs(g(k, j)))) {
          ++ratio_fail;
          k = 6;
          break;
        }

    Matrix g2 = g;
    const Eigen::Index target = t % 6;
    g2.row(target) += random_matrix(1, 5, rng);
    const Vector a2 = adapt_forward(g2, p).a;
    for (Eigen::Index k = 0; k < 6; ++k)
      if (k != target && a2(k) != r.a(k)) {
        ++row_fail;
        break;
      }

    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix gp(6, 5);
    for (int i = 0; i < 6; ++i) gp.row(i) = g.row(perm[i]);
    const Vector ap = adapt_forward(gp, p).a;
    for (int i = 0; i < 6; ++i)
      if (ap(i) != r.a(perm[i])) {
        ++perm_fail;
        break;
      }

    AdaptParams pc = p;
    for (Eigen::Index i = 0; i < pc.wp.rows(); ++i) pc.wp.row(i).setConstant(nd(rng));
    std::vector<int> cperm(5);
    std::iota(cperm.begin(), cperm.end(), 0);
    std::shuffle(cperm.begin(), cperm.end(), rng);
    Matrix gc(6, 5);
    for (int j = 0; j < 5; ++j) gc.col(j) = g.col(cperm[j]);
    if ((adapt_forward(g, pc).a - adapt_forward(gc, pc).a).cwiseAbs().maxCoeff() > 1e-12)
      ++const_fail;

    const Vector ab = adapt_forward(random_matrix(8, 5, rng, 3.0), random_adapter(5, 4, 3, rng, 4.0)).a;
    if (!(ab.minCoeff() > 0.0 && ab.maxCoeff() < 1.0)) ++bound_fail;
  }
  Outcome o;
  o.pass = ratio_fail + row_fail + perm_fail + const_fail + bound_fail == 0;
  std::ostringstream s;
  s << kTrials << " trials each; failures: shared-ratio " << ratio_fail << ", row-independence "
    << row_fail << ", permutation-equivariance " << perm_fail << ", constant-Wp invariance "
    << const_fail << ", sigmoid-bounds " << bound_fail;
  o.detail = s.str();
  return o;
}

// 6 ------------------------------------------------------------------------

Outcome label_propagation() {
  Rng rng = make_rng(606);
  double oracle_err = 0.0, limit_err = 0.0;
  int fixtures = 0;
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index m = 3;
    const Matrix es = random_matrix(m, 3, rng), eq = random_matrix(m, 2, rng);
    const std::vector<std::size_t> labels{0, 1, static_cast<std::size_t>(t % 2)};
    const std::vector<bool> flags{true, true, true};
    Matrix e(m, 5);
    e << es, eq;
    PropagationConfig cfg;
    cfg.scale = (random_matrix(m, 1, rng).array().abs() + 0.5).matrix().col(0);
    Matrix w = Matrix::Zero(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j)
        if (i != j)
          w(i, j) = std::exp(-(cfg.scale.array() * (e.col(i) - e.col(j)).array()).square().sum() /
                             (2.0 * double(m)));
    Matrix wn(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) wn(i, j) = w(i, j) / std::sqrt(w.row(i).sum() * w.row(j).sum());
    Matrix y0 = Matrix::Zero(5, 2);
    for (int i = 0; i < 3; ++i) y0(i, static_cast<Eigen::Index>(labels[i])) = 1.0;
    for (double alpha : {0.1, 0.5, 0.9, 0.99}) {
      cfg.alpha = alpha;
      const auto r = label_propagate(es, eq, labels, flags, 2, cfg);
      const Matrix z = gauss_jordan_inverse(Matrix::Identity(5, 5) - alpha * wn) * y0;
      oracle_err = std::max(oracle_err, (r.z - z).cwiseAbs().maxCoeff());
      ++fixtures;
    }
    cfg.alpha = 1e-12;
    const auto r0 = label_propagate(es, eq, labels, flags, 2, cfg);
    limit_err = std::max(limit_err, (r0.z - y0).cwiseAbs().maxCoeff());
  }
  Outcome o;
  o.pass = oracle_err <= 1e-6 && limit_err <= 1e-6;
  o.detail = fmt("max |Z - dense oracle| %.2e over %.0f 5-node fixtures; alpha=1e-12 |Z - Y0| %.2e",
                 oracle_err, fixtures, limit_err);
  return o;
}

// 7 and 9 ------------------------------------------------------------------

struct AblationOutcomes {
  Outcome learning, direction;
};

AblationOutcomes desk_ablation(const PoolSet& pools) {
  const ExperimentConfig cfg = desk_config();
  const TrainConfig tc = train_config_from(cfg);
  const auto start = Clock::now();
  const auto rows =
      ablation_run(tc, pools, {Variant::kProto, Variant::kEaProto, Variant::kEaProtoS},
                   cfg.get_size("eval.episodes"), cfg.get_u64("eval.seed"));
  const double total = seconds_since(start);
  std::cout << render_ablation_table(rows);
  const auto& proto = rows[0];
  const auto& ea = rows[1];
  const auto& eas = rows[2];

  AblationOutcomes out;
  const double acc = ea.report.mean_accuracy, base = proto.report.mean_accuracy;
  out.learning.pass = acc >= 0.90 && acc >= base - 0.02 && ea.train_seconds < 600.0 &&
                      ea.report.episodes == 200;
  out.learning.detail =
      fmt("EA-PROTO %.2f%% vs PROTO %.2f%% over 200 episodes; EA-PROTO trained in %.1f s", 100 * acc,
          100 * base, ea.train_seconds);
  out.direction.pass = ea.report.mean_accuracy >= eas.report.mean_accuracy && rows.size() == 3;
  out.direction.detail = fmt("EA-PROTO %.2f%% vs EA-PROTO-S %.2f%% (adapter n %.0f vs %.0f)",
                             100 * ea.report.mean_accuracy, 100 * eas.report.mean_accuracy,
                             double(ea.adapter_n), double(eas.adapter_n)) +
                         fmt("; one ablation run, %.1f s", total);
  return out;
}

// 8 ------------------------------------------------------------------------

Outcome semi_supervised(const PoolSet& pools) {
  ExperimentConfig cfg = desk_config();
  cfg.set("episode.k_shot", "5");
  TrainConfig tc = train_config_from(cfg);

  TrainConfig short_tc = tc;
  short_tc.iterations = 100;
  short_tc.val_cadence = 50;
  const auto equal_rows = semi_supervised_sweep(short_tc, pools, {1.0}, 50, 1);
  const bool identical = equal_rows[0].supervised.fingerprint == equal_rows[0].semi.fingerprint &&
                         equal_rows[0].supervised.report.accuracies ==
                             equal_rows[0].semi.report.accuracies;

  const auto rows = semi_supervised_sweep(tc, pools, {0.2}, 200, cfg.get_u64("eval.seed"));
  std::cout << render_sweep_table(rows);
  const double sup = rows[0].supervised.report.mean_accuracy;
  const double semi = rows[0].semi.report.mean_accuracy;
  Outcome o;
  o.pass = identical && semi >= sup - 0.01;
  o.detail = std::string("ratio 1.0 models ") + (identical ? "bit-identical" : "DIFFER") +
             " (" + equal_rows[0].semi.fingerprint + "); " +
             fmt("ratio 0.2 (2-way 5-shot): semi %.2f%% vs supervised %.2f%%", 100 * semi, 100 * sup);
  return o;
}

// 10 -----------------------------------------------------------------------

Outcome reproducibility(const PoolSet& pools) {
  const fs::path root = fs::temp_directory_path() / "eaen_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root / "a");
  fs::create_directories(root / "b");

  ExperimentConfig cfg = desk_config();
  cfg.set("train.iterations", "60");
  cfg.set("train.val_cadence", "20");
  cfg.set("train.val_episodes", "20");
  const std::string echo = cfg.resolved_text();
  {
    TrainState st(train_config_from(cfg));
    const TrainOutputs out{root / "a", echo};
    train_loop(train_config_from(cfg), load_pools(cfg), st, &out);
  }
  // Second run rebuilt only from the echo stored in the checkpoint.
  const Checkpoint ck = Checkpoint::load(root / "a" / "latest.ckpt");
  const ExperimentConfig again = ExperimentConfig::parse(ck.require_meta("config"), "echo");
  {
    TrainState st(train_config_from(again));
    const TrainOutputs out{root / "b", again.resolved_text()};
    train_loop(train_config_from(again), load_pools(again), st, &out);
  }
  const auto ra = records_without_wall_time(root / "a" / "metrics.jsonl");
  const auto rb = records_without_wall_time(root / "b" / "metrics.jsonl");
  const bool logs_equal = ra.size() == 3 && ra == rb;

  TrainState ea(train_config_from(again)), eb(train_config_from(again));
  restore_checkpoint(ea, Checkpoint::load(root / "a" / "best.ckpt"));
  restore_checkpoint(eb, Checkpoint::load(root / "b" / "best.ckpt"));
  const auto rep_a = evaluate(ea.model, pools.test, ea.model.config().spec, 50, 2024);
  const auto rep_b = evaluate(eb.model, pools.test, eb.model.config().spec, 50, 2024);
  const bool eval_equal = rep_a.accuracies == rep_b.accuracies && rep_a.mean_loss == rep_b.mean_loss;

  // Resume equivalence on a 50-iteration fixture.
  ExperimentConfig rcfg = desk_config();
  rcfg.set("train.iterations", "50");
  rcfg.set("train.val_cadence", "10");
  rcfg.set("train.val_episodes", "10");
  const TrainConfig full = train_config_from(rcfg);
  TrainState straight(full);
  const auto straight_records = train_loop(full, pools, straight);

  TrainConfig head = full;
  head.iterations = 23;
  TrainState interrupted(head);
  fs::create_directories(root / "resume");
  const TrainOutputs rout{root / "resume", rcfg.resolved_text()};
  train_loop(head, pools, interrupted, &rout);
  TrainState resumed(full);
  restore_checkpoint(resumed, Checkpoint::load(root / "resume" / "latest.ckpt"));
  const auto tail = train_loop(full, pools, resumed);
  const bool resume_equal =
      parameter_fingerprint(straight.model) == parameter_fingerprint(resumed.model) &&
      tail.size() == 3 &&
      std::equal(tail.begin(), tail.end(), straight_records.end() - 3,
                 [](const MetricRecord& x, const MetricRecord& y) {
                   return x.iteration == y.iteration && x.loss == y.loss &&
                          x.accuracy == y.accuracy;
                 });
  fs::remove_all(root);

  Outcome o;
  o.pass = logs_equal && eval_equal && resume_equal;
  o.detail = std::string("metrics log from echoed config ") + (logs_equal ? "identical" : "DIFFERS") +
             " (" + std::to_string(ra.size()) + " records, wall_time excluded); eval rerun " +
             (eval_equal ? "identical" : "DIFFERS") + "; resume at 23 of 50 " +
             (resume_equal ? "bit-identical" : "DIFFERS");
  return o;
}

}  // namespace

int main() {
  const auto start = Clock::now();
  const PoolSet pools = load_pools(desk_config());
  Outcome results[10];
  auto run = [&](int id, const std::function<Outcome()>& f) {
    const auto t = Clock::now();
    try {
      results[id - 1] = f();
    } catch (const std::exception& e) {
      results[id - 1] = {false, std::string("exception: ") + e.what()};
    }
    std::cerr << "criterion " << id << " evaluated in " << fmt("%.1f s", seconds_since(t)) << "\n";
  };
  run(1, gradient_oracle);
  run(2, [&] { return identity_equivalence(pools); });
  run(3, shape_contracts);
  run(4, classifier_properties);
  run(5, adapter_properties);
  run(6, label_propagation);
  run(7, [&] {
    const auto both = desk_ablation(pools);
    results[8] = both.direction;
    return both.learning;
  });
  run(8, [&] { return semi_supervised(pools); });
  run(10, [&] { return reproducibility(pools); });
  if (results[6].detail.rfind("exception", 0) == 0) results[8] = results[6];

  const char* names[10] = {"gradient oracle",       "identity equivalence", "shape contracts",
                           "classifier properties", "adapter properties",   "label propagation",
                           "desk-scale learning",   "semi-supervised consistency",
                           "ablation direction",    "reproducibility"};
  int failures = 0;
  for (int i = 0; i < 10; ++i) {
    std::cout << "criterion " << (i + 1) << " " << (results[i].pass ? "PASS" : "FAIL") << "  "
              << names[i] << ": " << results[i].detail << "\n";
    failures += !results[i].pass;
  }
  std::cout << "acceptance total " << fmt("%.1f s", seconds_since(start)) << ", " << failures
            << " failing\n";
  return failures == 0 ? 0 : 1;
}
