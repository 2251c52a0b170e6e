#include "eaen/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "eaen/config.hpp"
#include "eaen/evaluation.hpp"

namespace eaen {

namespace {

constexpr std::uint64_t kTrainStream = 0x7a11000000000000ull;
constexpr std::uint64_t kValSeedOffset = 0x5a11dull;

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainConfig train_config_from(const ExperimentConfig& cfg) {
  cfg.validate();
  TrainConfig tc;
  tc.model = model_config_from(cfg);
  tc.init_lr = cfg.get_real("train.init_lr");
  tc.decay_every = cfg.get_size("train.decay_every");
  tc.iterations = cfg.get_size("train.iterations");
  tc.seed = cfg.get_u64("train.seed");
  tc.val_cadence = cfg.get_size("train.val_cadence");
  tc.val_episodes = cfg.get_size("train.val_episodes");
  tc.meta_batch = cfg.get_size("train.meta_batch");
  return tc;
}

Episode training_episode(const TrainConfig& config, const ClassPool& pool, std::size_t iteration,
                         std::size_t slot) {
  Rng rng = make_rng(config.seed, kTrainStream + iteration * config.meta_batch + slot);
  return draw_episode(pool, config.spec(), rng);
}

StepResult train_step(Model& model, std::span<const Episode> episodes, Adam& optimizer, double lr) {
  const auto params = model.params();
  const auto buffers = model.buffers();
  std::vector<Tensor> saved;
  saved.reserve(buffers.size());
  for (const auto& b : buffers) saved.push_back(*b.tensor);

  model.zero_grad();
  StepResult r;
  try {
    for (const auto& ep : episodes) r.loss += model.forward_backward(ep).loss;
  } catch (const NumericError&) {
    r.loss = std::numeric_limits<double>::quiet_NaN();
  }
  const double scale = 1.0 / static_cast<double>(episodes.size());
  r.loss *= scale;
  bool finite = std::isfinite(r.loss);
  for (const auto& p : params) {
    if (episodes.size() > 1)
      for (auto& g : p.param->grad.values()) g *= scale;
    finite = finite && all_finite(p.param->grad);
  }
  if (!finite) {
    for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].tensor = saved[i];
    model.zero_grad();
    return r;
  }
  optimizer.step(params, lr);
  r.applied = true;
  return r;
}

Checkpoint make_checkpoint(TrainState& state, const std::string& config_echo) {
  Checkpoint ck;
  const auto& mc = state.model.config();
  auto real = [](double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  ck.meta["format"] = "eaen-checkpoint";
  ck.meta["config"] = config_echo;
  ck.meta["arch"] = to_string(mc.backbone.arch);
  ck.meta["iteration"] = std::to_string(state.iteration);
  ck.meta["best_val_accuracy"] = real(state.best_val_accuracy);
  ck.meta["best_iteration"] = std::to_string(state.best_iteration);
  ck.meta["episode.n_way"] = std::to_string(mc.spec.n_way);
  ck.meta["episode.k_shot"] = std::to_string(mc.spec.k_shot);
  ck.meta["episode.t_query"] = std::to_string(mc.spec.t_query);
  ck.meta["adapter.mode"] = to_string(mc.adapt_mode);
  ck.meta["adapter.n"] = std::to_string(state.model.adapter_n());
  ck.meta["adapter.d"] = std::to_string(mc.adapt_d);
  ck.meta["adapter.f"] = std::to_string(mc.adapt_f);
  ck.meta["adapter.hidden_activation"] = to_string(mc.hidden_activation);
  ck.meta["adapter.output_activation"] = to_string(mc.output_activation);
  ck.meta["classifier"] = to_string(mc.classifier);
  ck.meta["distance"] = to_string(mc.distance);
  const auto& adam = state.optimizer.config();
  ck.meta["optim.adam.steps"] = std::to_string(state.optimizer.steps());
  ck.meta["optim.adam.beta1"] = real(adam.beta1);
  ck.meta["optim.adam.beta2"] = real(adam.beta2);
  ck.meta["optim.adam.eps"] = real(adam.eps);
  for (const auto& p : state.model.params()) ck.tensors.emplace(p.name, p.param->value);
  for (const auto& b : state.model.buffers()) ck.tensors.emplace(b.name, *b.tensor);
  for (const auto& [name, t] : state.optimizer.first_moments()) ck.tensors.emplace("optim.adam.m." + name, t);
  for (const auto& [name, t] : state.optimizer.second_moments()) ck.tensors.emplace("optim.adam.v." + name, t);
  return ck;
}

void restore_checkpoint(TrainState& state, const Checkpoint& ck) {
  auto assign = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = ck.require_tensor(name);
    if (!src.same_shape(dst)) {
      throw ContractError("checkpoint tensor " + name + " has shape " + src.shape_string() +
                          ", model expects " + dst.shape_string());
    }
    dst = src;
  };
  for (const auto& p : state.model.params()) assign(p.name, p.param->value);
  for (const auto& b : state.model.buffers()) assign(b.name, *b.tensor);
  state.optimizer.first_moments().clear();
  state.optimizer.second_moments().clear();
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("optim.adam.m.", 0) == 0) state.optimizer.first_moments().emplace(name.substr(13), t);
    if (name.rfind("optim.adam.v.", 0) == 0) state.optimizer.second_moments().emplace(name.substr(13), t);
  }
  state.optimizer.set_steps(std::stoull(ck.require_meta("optim.adam.steps")));
  state.iteration = std::stoull(ck.require_meta("iteration"));
  state.best_val_accuracy = std::stod(ck.require_meta("best_val_accuracy"));
  state.best_iteration = std::stoull(ck.require_meta("best_iteration"));
  state.model.zero_grad();
}

std::vector<MetricRecord> train_loop(const TrainConfig& config, const PoolSet& pools,
                                     TrainState& state, const TrainOutputs* outputs) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  std::vector<MetricRecord> records;
  const std::string echo = outputs ? outputs->config_echo : std::string{};
  auto save = [&](const std::string& file) {
    if (outputs) make_checkpoint(state, echo).save(outputs->run_dir / file);
  };
  bool best_written = false;

  while (state.iteration < config.iterations) {
    std::vector<Episode> batch;
    for (std::size_t s = 0; s < config.meta_batch; ++s) {
      batch.push_back(training_episode(config, pools.train, state.iteration, s));
    }
    const double lr = lr_at(state.iteration, config.init_lr, config.decay_every);
    const auto step = train_step(state.model, batch, state.optimizer, lr);
    if (!step.applied) {
      std::cerr << "warning: non-finite loss at iteration " << state.iteration << " (seed "
                << config.seed << "), step skipped\n";
      if (++state.consecutive_failures >= config.max_consecutive_failures) {
        throw NumericError("training diverged: " + std::to_string(state.consecutive_failures) +
                           " consecutive non-finite steps ending at iteration " +
                           std::to_string(state.iteration) + ", seed " +
                           std::to_string(config.seed));
      }
    } else {
      state.consecutive_failures = 0;
    }
    ++state.iteration;

    if (config.val_cadence > 0 && state.iteration % config.val_cadence == 0) {
      const auto report = evaluate(state.model, pools.val, config.spec(), config.val_episodes,
                                   config.seed + kValSeedOffset);
      MetricRecord rec;
      rec.iteration = state.iteration;
      rec.split = "val";
      rec.loss = report.mean_loss;
      rec.accuracy = report.mean_accuracy;
      rec.lr = lr_at(state.iteration - 1, config.init_lr, config.decay_every);
      rec.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
      rec.ci95 = report.ci95;
      rec.episodes = report.episodes;
      records.push_back(rec);
      if (outputs) append_record(outputs->run_dir / "metrics.jsonl", to_json(rec));
      if (report.mean_accuracy > state.best_val_accuracy) {
        state.best_val_accuracy = report.mean_accuracy;
        state.best_iteration = state.iteration;
        save("best.ckpt");
        best_written = true;
      }
      save("latest.ckpt");
    }
  }
  save("latest.ckpt");
  if (outputs && !best_written && !std::filesystem::exists(outputs->run_dir / "best.ckpt")) {
    save("best.ckpt");
  }
  return records;
}

TrainState train_model(const TrainConfig& config, const PoolSet& pools) {
  TrainState state(config);
  train_loop(config, pools, state);
  return state;
}

std::string parameter_fingerprint(Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : model.params()) mix(p.param->value);
  for (const auto& b : model.buffers()) mix(*b.tensor);
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace eaen
