#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <unistd.h>

#include <CLI11.hpp>

#include <json.hpp>

#include "eaen/config.hpp"
#include "eaen/errors.hpp"
#include "eaen/evaluation.hpp"
#include "eaen/gradcheck.hpp"
#include "eaen/training.hpp"

namespace fs = std::filesystem;
using namespace eaen;

namespace {

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = ExperimentConfig::load(path);
  for (const auto& o : overrides) cfg.set_override(o);
  cfg.validate();
  return cfg;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(fs::path dir) : path_(std::move(dir) / "lock") {
    if (fs::exists(path_)) {
      throw IoError("run directory is locked by another process (" + path_.string() +
                    "); remove the file if that process is gone");
    }
    write_text(path_, std::to_string(::getpid()) + "\n");
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

void print_records(const std::vector<MetricRecord>& records) {
  for (const auto& r : records) {
    std::cout << "iter " << r.iteration << "  val loss " << std::fixed << std::setprecision(4)
              << r.loss << "  acc " << std::setprecision(2) << 100.0 * r.accuracy << "% +- "
              << 100.0 * r.ci95 << "\n";
  }
}

void report_eval(const EvalReport& r, const std::string& label) {
  std::cout << label << ": " << std::fixed << std::setprecision(2) << 100.0 * r.mean_accuracy
            << "% +- " << 100.0 * r.ci95 << " (95% CI, " << r.episodes << " episodes)\n";
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& run_dir_opt) {
  const ExperimentConfig cfg = load_config(config_path, overrides);
  const TrainConfig tc = train_config_from(cfg);
  const PoolSet pools = load_pools(cfg);

  fs::path run_dir = run_dir_opt.empty()
                         ? fs::path(cfg.get("run.root")) / (cfg.hash() + "-" + timestamp())
                         : fs::path(run_dir_opt);
  if (fs::exists(run_dir / "config.resolved")) {
    throw IoError("run directory " + run_dir.string() + " already holds a run; use resume");
  }
  fs::create_directories(run_dir);
  RunLock lock(run_dir);
  const std::string echo = cfg.resolved_text();
  write_text(run_dir / "config.resolved", echo);
  std::cout << "run directory: " << run_dir.string() << "\n";

  TrainState state(tc);
  TrainOutputs outputs{run_dir, echo};
  print_records(train_loop(tc, pools, state, &outputs));
  std::cout << "finished " << state.iteration << " iterations";
  if (state.best_val_accuracy >= 0.0) {
    std::cout << ", best val accuracy " << std::fixed << std::setprecision(2)
              << 100.0 * state.best_val_accuracy << "% at iteration " << state.best_iteration;
  }
  std::cout << "\n";
  return 0;
}

int run_resume(const std::string& run_dir_arg) {
  const fs::path run_dir(run_dir_arg);
  RunLock lock(run_dir);
  const ExperimentConfig cfg =
      ExperimentConfig::parse(read_text(run_dir / "config.resolved"), "config.resolved");
  const TrainConfig tc = train_config_from(cfg);
  const PoolSet pools = load_pools(cfg);
  TrainState state(tc);
  restore_checkpoint(state, Checkpoint::load(run_dir / "latest.ckpt"));
  std::cout << "resuming at iteration " << state.iteration << " of " << tc.iterations << "\n";
  TrainOutputs outputs{run_dir, cfg.resolved_text()};
  print_records(train_loop(tc, pools, state, &outputs));
  std::cout << "finished " << state.iteration << " iterations\n";
  return 0;
}

struct LoadedModel {
  ExperimentConfig cfg;
  TrainConfig tc;
  std::unique_ptr<TrainState> state;
};

LoadedModel load_checkpoint_model(const std::string& path,
                                  const std::vector<std::string>& overrides) {
  const Checkpoint ck = Checkpoint::load(path);
  LoadedModel lm;
  lm.cfg = ExperimentConfig::parse(ck.require_meta("config"), path);
  const TrainConfig stored = train_config_from(lm.cfg);
  for (const auto& o : overrides) lm.cfg.set_override(o);
  lm.cfg.validate();
  lm.tc = train_config_from(lm.cfg);
  // The network is rebuilt with the stored shape; a changed episode shape is
  // caught by the evaluator.
  TrainConfig build = lm.tc;
  build.model = stored.model;
  lm.state = std::make_unique<TrainState>(build);
  restore_checkpoint(*lm.state, ck);
  return lm;
}

int run_eval(const std::string& ckpt, const std::vector<std::string>& overrides,
             const std::string& split) {
  const auto start = std::chrono::steady_clock::now();
  auto lm = load_checkpoint_model(ckpt, overrides);
  const PoolSet pools = load_pools(lm.cfg);
  const auto s = parse_split(split);
  const auto report = evaluate(lm.state->model, pools.get(s), lm.tc.spec(),
                               lm.cfg.get_size("eval.episodes"), lm.cfg.get_u64("eval.seed"));
  for (const auto& o : overrides) std::cout << "override: " << o << "\n";
  report_eval(report, split + " accuracy");
  MetricRecord rec;
  rec.iteration = lm.state->iteration;
  rec.split = split;
  rec.loss = report.mean_loss;
  rec.accuracy = report.mean_accuracy;
  rec.ci95 = report.ci95;
  rec.episodes = report.episodes;
  rec.lr = lr_at(rec.iteration, lm.tc.init_lr, lm.tc.decay_every);
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto j = to_json(rec);
  append_record(fs::path(ckpt).parent_path() / "eval.jsonl", j);
  std::cout << j.dump() << "\n";
  return 0;
}

int run_export(const std::string& ckpt, const std::vector<std::string>& overrides,
               const std::string& split, const std::string& out, std::uint64_t episode_seed) {
  auto lm = load_checkpoint_model(ckpt, overrides);
  const PoolSet pools = load_pools(lm.cfg);
  Rng rng = make_rng(episode_seed, 0);
  const Episode ep = draw_episode(pools.get(parse_split(split)), lm.tc.spec(), rng);
  if (out == "-") {
    export_embeddings(lm.state->model, ep, std::cout);
  } else {
    export_embeddings(lm.state->model, ep, fs::path(out));
    std::cout << "wrote " << ep.size() << " rows to " << out << "\n";
  }
  return 0;
}

int run_gradcheck(const std::vector<std::string>& components, double tolerance,
                  double perturb) {
  std::vector<GradComponent> list;
  if (components.empty()) {
    list = all_grad_components();
  } else {
    for (const auto& c : components) list.push_back(parse_grad_component(c));
  }
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  opt.perturb = perturb;
  bool ok = true;
  nlohmann::json summary;
  for (auto c : list) {
    const auto r = check_component(c, opt);
    std::cout << std::left << std::setw(16) << to_string(c) << (r.passed ? "PASS" : "FAIL")
              << "  max rel err " << std::scientific << std::setprecision(3) << r.max_rel_error
              << "  (" << r.checked << " entries; worst " << r.worst_tensor << "[" << r.worst_index
              << "] analytic " << r.worst_analytic << " numeric " << r.worst_numeric << ")\n"
              << std::defaultfloat;
    ok = ok && r.passed;
    summary[to_string(c)] = {{"max_rel_error", r.max_rel_error}, {"passed", r.passed},
                             {"worst_tensor", r.worst_tensor}, {"worst_index", r.worst_index}};
  }
  std::cout << summary.dump() << "\n";
  return ok ? 0 : static_cast<int>(ExitCode::kNumeric);
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad ratio '" + item + "' in --ratios");
    }
  }
  if (out.empty()) throw ConfigError("--ratios is empty");
  return out;
}

int run_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& ratios) {
  const ExperimentConfig cfg = load_config(config_path, overrides);
  const TrainConfig tc = train_config_from(cfg);
  const PoolSet pools = load_pools(cfg);
  const auto rows = semi_supervised_sweep(tc, pools, parse_ratios(ratios),
                                          cfg.get_size("eval.episodes"), cfg.get_u64("eval.seed"));
  std::cout << render_sweep_table(rows);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"ratio", r.ratio},
                 {"supervised", {{"accuracy", r.supervised.report.mean_accuracy},
                                 {"ci95", r.supervised.report.ci95},
                                 {"fingerprint", r.supervised.fingerprint}}},
                 {"semi", {{"accuracy", r.semi.report.mean_accuracy},
                           {"ci95", r.semi.report.ci95},
                           {"fingerprint", r.semi.fingerprint}}}});
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int run_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::vector<std::string>& variant_names) {
  const ExperimentConfig cfg = load_config(config_path, overrides);
  const TrainConfig tc = train_config_from(cfg);
  const PoolSet pools = load_pools(cfg);
  std::vector<Variant> variants;
  if (variant_names.empty()) {
    variants = {Variant::kProto, Variant::kEaProto, Variant::kEaProtoS,
                Variant::kTpn,   Variant::kEaTpn,   Variant::kEaTpnS};
  } else {
    for (const auto& v : variant_names) variants.push_back(parse_variant(v));
  }
  const auto rows = ablation_run(tc, pools, variants, cfg.get_size("eval.episodes"),
                                 cfg.get_u64("eval.seed"));
  std::cout << render_ablation_table(rows);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"variant", to_string(r.variant)}, {"adapter_n", r.adapter_n},
                 {"accuracy", r.report.mean_accuracy}, {"ci95", r.report.ci95},
                 {"episodes", r.report.episodes}});
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int run_synth(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = ExperimentConfig::load(config_path);
  for (const auto& o : overrides) cfg.set_override(o);
  const SyntheticParams sp = synthetic_params_from(cfg);
  const ClassPool pool = make_synthetic_pool(sp);
  save_synthetic_archive(out, sp, pool);
  std::cout << "wrote " << pool.classes.size() << " classes x " << sp.per_class << " images ("
            << to_string(sp.image_shape) << ") to " << out << "\n";
  return 0;
}

// Accepts "--eval.episodes 50" and "--eval.episodes=50" as shorthands for
// "--set eval.episodes=50".
std::vector<std::string> extras_as_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos) {
      throw ConfigError("unexpected argument '" + a + "'");
    }
    const std::string body = a.substr(2);
    if (body.find('=') != std::string::npos) {
      out.push_back(body);
    } else if (i + 1 < extras.size()) {
      out.push_back(body + "=" + extras[++i]);
    } else {
      throw ConfigError("missing value for " + a);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Episode adaptive embedding networks for few-shot learning"};
  app.require_subcommand(1);

  std::string config_path, run_dir, ckpt, split = "test", out, ratios = "0.2,0.4,0.6,0.8,1.0";
  std::vector<std::string> overrides, components, variants;
  double tolerance = 1e-4, perturb = 0.0;
  std::uint64_t episode_seed = 0;

  auto* train = app.add_subcommand("train", "Meta-train a model");
  train->add_option("--config", config_path, "Experiment config file")->required();
  train->add_option("--set", overrides, "Override a key (key=value), repeatable");
  train->add_option("--run-dir", run_dir, "Run directory (default: <run.root>/<hash>-<time>)");

  auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
  resume->add_option("--run", run_dir, "Run directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("--set", overrides, "Override a key (key=value), repeatable");
  eval->add_option("--split", split, "val or test");

  auto* exp = app.add_subcommand("export", "Dump generic and adapted embeddings of one episode");
  exp->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  exp->add_option("--set", overrides, "Override a key (key=value), repeatable");
  exp->add_option("--split", split, "val or test");
  exp->add_option("--out", out, "Output file, '-' for stdout")->required();
  exp->add_option("--episode-seed", episode_seed, "Seed of the exported episode");

  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  grad->add_option("--component", components,
                   "adapter, adapter+proto, convnet4-block, resnet12-block, tpn, pipeline");
  grad->add_option("--tolerance", tolerance, "Maximum relative error");
  grad->add_option("--perturb", perturb, "Scale analytic gradients by (1+x)");

  auto* sweep = app.add_subcommand("sweep-semi", "Supervised vs semi-supervised label ratios");
  sweep->add_option("--config", config_path, "Experiment config file")->required();
  sweep->add_option("--set", overrides, "Override a key (key=value), repeatable");
  sweep->add_option("--ratios", ratios, "Comma-separated labeled ratios");

  auto* ablate = app.add_subcommand("ablate", "Train and compare model variants");
  ablate->add_option("--config", config_path, "Experiment config file")->required();
  ablate->add_option("--set", overrides, "Override a key (key=value), repeatable");
  ablate->add_option("--variant", variants,
                     "PROTO, EA-PROTO, EA-PROTO-S, TPN, EA-TPN, EA-TPN-S (default: all)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset archive");
  synth->add_option("--config", config_path, "Config file supplying data.synth.* keys");
  synth->add_option("--set", overrides, "Override a key (key=value), repeatable");
  synth->add_option("--out", out, "Archive path")->required();

  for (auto* sub : {train, eval, exp, sweep, ablate, synth}) sub->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    for (auto* sub : app.get_subcommands()) {
      const auto extra = extras_as_overrides(sub->remaining());
      overrides.insert(overrides.end(), extra.begin(), extra.end());
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  }

  try {
    if (*train) return run_train(config_path, overrides, run_dir);
    if (*resume) return run_resume(run_dir);
    if (*eval) return run_eval(ckpt, overrides, split);
    if (*exp) return run_export(ckpt, overrides, split, out, episode_seed);
    if (*grad) return run_gradcheck(components, tolerance, perturb);
    if (*sweep) return run_sweep(config_path, overrides, ratios);
    if (*ablate) return run_ablate(config_path, overrides, variants);
    if (*synth) return run_synth(config_path, overrides, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kConfig);
  }
  return 0;
}
