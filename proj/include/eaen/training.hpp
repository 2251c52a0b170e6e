#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eaen/checkpoint.hpp"
#include "eaen/metrics_log.hpp"
#include "eaen/model.hpp"
#include "eaen/optimizer.hpp"

namespace eaen {

class ExperimentConfig;

struct TrainConfig {
  ModelConfig model;
  double init_lr = 1e-3;
  std::size_t decay_every = 10000;
  std::size_t iterations = 1000;
  std::uint64_t seed = 1;
  std::size_t val_cadence = 0;  // 0: never validate
  std::size_t val_episodes = 100;
  std::size_t meta_batch = 1;
  AdamConfig adam;
  std::size_t max_consecutive_failures = 10;

  const EpisodeSpec& spec() const noexcept { return model.spec; }
};

TrainConfig train_config_from(const ExperimentConfig& cfg);

struct TrainState {
  Model model;
  Adam optimizer;
  std::size_t iteration = 0;  // completed iterations
  double best_val_accuracy = -1.0;
  std::size_t best_iteration = 0;
  std::size_t consecutive_failures = 0;

  explicit TrainState(const TrainConfig& config) : model(config.model), optimizer(config.adam) {}
};

// The training episode for (iteration, slot) is a pure function of the seed.
Episode training_episode(const TrainConfig& config, const ClassPool& pool, std::size_t iteration,
                         std::size_t slot = 0);

struct StepResult {
  double loss = 0.0;
  bool applied = false;
};

// Zeroes gradients, backpropagates the mean loss over `episodes`, and applies
// one Adam update at `lr`. On a non-finite loss or gradient nothing is
// updated (batch-norm running statistics are restored too) and
// applied == false.
StepResult train_step(Model& model, std::span<const Episode> episodes, Adam& optimizer, double lr);

// Checkpoint <-> state. The config echo is stored under meta "config".
Checkpoint make_checkpoint(TrainState& state, const std::string& config_echo);
void restore_checkpoint(TrainState& state, const Checkpoint& ckpt);

struct TrainOutputs {
  std::filesystem::path run_dir;  // latest.ckpt, best.ckpt, metrics.jsonl
  std::string config_echo;
};

// Runs until state.iteration == config.iterations, validating every
// val_cadence iterations. With outputs, persists latest/best checkpoints and
// appends metric records. Returns the validation records produced.
std::vector<MetricRecord> train_loop(const TrainConfig& config, const PoolSet& pools,
                                     TrainState& state, const TrainOutputs* outputs = nullptr);

// Convenience: fresh state trained on pools.train / pools.val.
TrainState train_model(const TrainConfig& config, const PoolSet& pools);

// Order-sensitive FNV-1a over every parameter and buffer value.
std::string parameter_fingerprint(Model& model);

}  // namespace eaen
