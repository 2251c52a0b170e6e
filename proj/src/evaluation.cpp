#include "eaen/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "eaen/training.hpp"

namespace eaen {

namespace {

constexpr std::uint64_t kEvalStream = 0xe7a1000000000000ull;

}  // namespace

EvalReport summarize(std::vector<double> accuracies, double mean_loss) {
  EvalReport r;
  r.episodes = accuracies.size();
  r.mean_loss = mean_loss;
  if (!accuracies.empty()) {
    const double n = static_cast<double>(accuracies.size());
    r.mean_accuracy = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / n;
    if (accuracies.size() > 1) {
      double sq = 0.0;
      for (double a : accuracies) sq += (a - r.mean_accuracy) * (a - r.mean_accuracy);
      r.ci95 = 1.96 * std::sqrt(sq / (n - 1.0)) / std::sqrt(n);
    }
  }
  r.accuracies = std::move(accuracies);
  return r;
}

EvalReport evaluate_predictor(const EpisodePredictor& predictor, const ClassPool& pool,
                              const EpisodeSpec& spec, std::size_t episodes, std::uint64_t seed) {
  std::vector<double> acc;
  acc.reserve(episodes);
  double loss_sum = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng = make_rng(seed, kEvalStream + e);
    const Episode ep = draw_episode(pool, spec, rng);
    double loss = 0.0;
    const auto pred = predictor(ep, &loss);
    const auto truth = ep.query_labels();
    if (pred.size() != truth.size()) throw ContractError("predictor returned the wrong count");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += pred[i] == truth[i];
    acc.push_back(static_cast<double>(correct) / static_cast<double>(truth.size()));
    loss_sum += loss;
  }
  return summarize(std::move(acc), episodes ? loss_sum / static_cast<double>(episodes) : 0.0);
}

EvalReport evaluate(Model& model, const ClassPool& pool, const EpisodeSpec& spec,
                    std::size_t episodes, std::uint64_t seed) {
  if (pool.split == Split::kTrain) {
    throw ContractError("evaluation expects a val or test pool");
  }
  const auto& stored = model.config().spec;
  if (spec.n_way != stored.n_way || spec.k_shot != stored.k_shot ||
      spec.t_query != stored.t_query ||
      (model.config().strategy == SupportStrategy::kSupervised &&
       spec.labeled_per_class() != stored.labeled_per_class())) {
    throw ContractError("evaluation episode shape (N=" + std::to_string(spec.n_way) +
                        ", K=" + std::to_string(spec.k_shot) + ", T=" +
                        std::to_string(spec.t_query) + ") differs from the stored model shape (N=" +
                        std::to_string(stored.n_way) + ", K=" + std::to_string(stored.k_shot) +
                        ", T=" + std::to_string(stored.t_query) + ")");
  }
  return evaluate_predictor(
      [&](const Episode& ep, double* loss) {
        auto out = model.forward(ep, Mode::kEval);
        if (loss) *loss = out.loss;
        return out.predictions;
      },
      pool, spec, episodes, seed);
}

std::vector<SweepRow> semi_supervised_sweep(const TrainConfig& base, const PoolSet& pools,
                                            const std::vector<double>& ratios,
                                            std::size_t eval_episodes, std::uint64_t eval_seed) {
  std::vector<SweepRow> rows;
  for (double ratio : ratios) {
    SweepRow row;
    row.ratio = ratio;
    for (auto strategy : {SupportStrategy::kSupervised, SupportStrategy::kSemiSupervised}) {
      TrainConfig cfg = base;
      cfg.model.spec.labeled_ratio = ratio;
      cfg.model.strategy = strategy;
      cfg.model.spec.validate();
      TrainState state = train_model(cfg, pools);
      SweepCell cell;
      cell.report = evaluate(state.model, pools.test, cfg.spec(), eval_episodes, eval_seed);
      cell.fingerprint = parameter_fingerprint(state.model);
      (strategy == SupportStrategy::kSupervised ? row.supervised : row.semi) = std::move(cell);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kProto: return "PROTO";
    case Variant::kEaProto: return "EA-PROTO";
    case Variant::kEaProtoS: return "EA-PROTO-S";
    case Variant::kTpn: return "TPN";
    case Variant::kEaTpn: return "EA-TPN";
    case Variant::kEaTpnS: return "EA-TPN-S";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::kProto, Variant::kEaProto, Variant::kEaProtoS, Variant::kTpn,
                 Variant::kEaTpn, Variant::kEaTpnS}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s +
                    "' (PROTO, EA-PROTO, EA-PROTO-S, TPN, EA-TPN, EA-TPN-S)");
}

ModelConfig variant_config(ModelConfig base, Variant v) {
  const bool tpn = v == Variant::kTpn || v == Variant::kEaTpn || v == Variant::kEaTpnS;
  base.classifier = tpn ? ClassifierKind::kTpn : ClassifierKind::kProto;
  switch (v) {
    case Variant::kProto:
    case Variant::kTpn: base.adapt_mode = AdaptMode::kOff; break;
    case Variant::kEaProto:
    case Variant::kEaTpn: base.adapt_mode = AdaptMode::kFullEpisode; break;
    case Variant::kEaProtoS:
    case Variant::kEaTpnS: base.adapt_mode = AdaptMode::kSupportOnly; break;
  }
  return base;
}

std::vector<AblationRow> ablation_run(const TrainConfig& base, const PoolSet& pools,
                                      const std::vector<Variant>& variants,
                                      std::size_t eval_episodes, std::uint64_t eval_seed) {
  std::vector<AblationRow> rows;
  for (auto v : variants) {
    TrainConfig cfg = base;
    cfg.model = variant_config(base.model, v);
    const auto start = std::chrono::steady_clock::now();
    TrainState state = train_model(cfg, pools);
    AblationRow row;
    row.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.variant = v;
    row.adapter_n = state.model.adapter_n();
    row.report = evaluate(state.model, pools.test, cfg.spec(), eval_episodes, eval_seed);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string pct(const EvalReport& r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * r.mean_accuracy << " +- " << 100.0 * r.ci95;
  return s.str();
}

}  // namespace

std::string render_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "Strategy";
  for (const auto& r : rows) {
    std::ostringstream h;
    h << std::fixed << std::setprecision(0) << 100.0 * r.ratio << "%";
    out << std::setw(18) << h.str();
  }
  out << "\n";
  out << std::setw(20) << "Supervised";
  for (const auto& r : rows) out << std::setw(18) << pct(r.supervised.report);
  out << "\n" << std::setw(20) << "Semi-supervised";
  for (const auto& r : rows) out << std::setw(18) << pct(r.semi.report);
  out << "\n";
  return out.str();
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "Model" << std::setw(12) << "adapter_n" << std::setw(20)
      << "accuracy (%)" << std::setw(10) << "episodes" << "train (s)\n";
  for (const auto& r : rows) {
    out << std::setw(14) << to_string(r.variant) << std::setw(12) << r.adapter_n << std::setw(20)
        << pct(r.report) << std::setw(10) << r.report.episodes << std::fixed
        << std::setprecision(1) << r.train_seconds << "\n";
  }
  return out.str();
}

void export_embeddings(Model& model, const Episode& episode, std::ostream& out) {
  const Episode ep = model.prepare(episode);
  const auto result = model.forward(ep, Mode::kEval);
  const auto m = result.generic.rows();
  out << "role\tclass\tlabeled";
  for (Eigen::Index k = 0; k < m; ++k) out << "\tg" << k;
  for (Eigen::Index k = 0; k < m; ++k) out << "\te" << k;
  out << "\n";
  out << std::setprecision(17);
  auto row = [&](const EpisodeItem& item, const char* role, Eigen::Index col) {
    out << role << "\t" << ep.class_map[item.label] << "\t" << (item.labeled ? 1 : 0);
    for (Eigen::Index k = 0; k < m; ++k) out << "\t" << result.generic(k, col);
    for (Eigen::Index k = 0; k < m; ++k) out << "\t" << result.adapted(k, col);
    out << "\n";
  };
  Eigen::Index col = 0;
  for (const auto& item : ep.support) row(item, "support", col++);
  for (const auto& item : ep.query) row(item, "query", col++);
}

void export_embeddings(Model& model, const Episode& episode, const std::filesystem::path& dest) {
  std::ofstream out(dest);
  if (!out) throw IoError("cannot write embeddings to " + dest.string());
  export_embeddings(model, episode, out);
  if (!out) throw IoError("failed writing " + dest.string());
}

}  // namespace eaen
