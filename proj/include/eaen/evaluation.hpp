#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "eaen/model.hpp"

namespace eaen {

struct TrainConfig;
struct PoolSet;

struct EvalReport {
  double mean_accuracy = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(episodes)
  double mean_loss = 0.0;
  std::vector<double> accuracies;
  std::size_t episodes = 0;
  std::string config_echo;
};

EvalReport summarize(std::vector<double> accuracies, double mean_loss = 0.0);

// Per-episode predictions for an arbitrary predictor (used for baselines and
// tests). `losses`, when given, receives one loss per episode.
using EpisodePredictor = std::function<std::vector<std::size_t>(const Episode&, double* loss)>;

EvalReport evaluate_predictor(const EpisodePredictor& predictor, const ClassPool& pool,
                              const EpisodeSpec& spec, std::size_t episodes, std::uint64_t seed);

// Eval-mode accuracy of `model` over `episodes` episodes of `pool` (val or
// test split). Episode e is drawn from its own stream of `seed`. Throws
// ContractError when `spec` differs from the shape the model was built for.
EvalReport evaluate(Model& model, const ClassPool& pool, const EpisodeSpec& spec,
                    std::size_t episodes, std::uint64_t seed);

struct SweepCell {
  EvalReport report;
  std::string fingerprint;  // of the trained parameters
};

struct SweepRow {
  double ratio = 1.0;
  SweepCell supervised;
  SweepCell semi;
};

// Trains and evaluates one model per (ratio, strategy).
std::vector<SweepRow> semi_supervised_sweep(const TrainConfig& base, const PoolSet& pools,
                                            const std::vector<double>& ratios,
                                            std::size_t eval_episodes, std::uint64_t eval_seed);

enum class Variant { kProto, kEaProto, kEaProtoS, kTpn, kEaTpn, kEaTpnS };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
// Applies the variant's classifier and adaptation mode to a model config.
ModelConfig variant_config(ModelConfig base, Variant v);

struct AblationRow {
  Variant variant;
  std::size_t adapter_n = 0;
  EvalReport report;
  double train_seconds = 0.0;
};

std::vector<AblationRow> ablation_run(const TrainConfig& base, const PoolSet& pools,
                                      const std::vector<Variant>& variants,
                                      std::size_t eval_episodes, std::uint64_t eval_seed);

std::string render_sweep_table(const std::vector<SweepRow>& rows);
std::string render_ablation_table(const std::vector<AblationRow>& rows);

// Tab-separated dump, one row per instance in canonical order:
//   role  class  labeled  g0 .. g{m-1}  e0 .. e{m-1}
// where class is the global class id.
// Reals use 17 significant digits, so parsing recovers them exactly.
void export_embeddings(Model& model, const Episode& episode, std::ostream& out);
void export_embeddings(Model& model, const Episode& episode, const std::filesystem::path& dest);

}  // namespace eaen
