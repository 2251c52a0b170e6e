#include "eaen/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace eaen {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const KeySpec* find_key(const std::string& key) {
  const auto& schema = config_schema();
  const auto it = std::find_if(schema.begin(), schema.end(),
                               [&](const KeySpec& k) { return k.key == key; });
  return it == schema.end() ? nullptr : &*it;
}

bool parse_real(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_int(const std::string& s, std::uint64_t& out) {
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> parse_size_list(const std::string& text, char sep,
                                         const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) {
    std::uint64_t v = 0;
    if (!parse_int(trim(part), v)) throw ConfigError(key + ": cannot parse '" + text + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = [] {
    std::vector<KeySpec> s = {
        {"data.source", ValueType::kString, "", true, "synthetic | folder | archive"},
        {"data.path", ValueType::kString, "", false, "image folder root or pool archive"},
        {"data.manifest", ValueType::kString, "", false, "class<TAB>split manifest (folder)"},
        {"data.image_size", ValueType::kString, "32x32x3", false, "WxHxC"},
        {"data.synth.classes", ValueType::kInt, "10", false, "synthetic class count"},
        {"data.synth.per_class", ValueType::kInt, "50", false, "synthetic instances per class"},
        {"data.synth.separation", ValueType::kReal, "3", false, "class mean contrast"},
        {"data.synth.seed", ValueType::kInt, "7", false, "synthetic pool seed"},
        {"data.synth.split", ValueType::kString, "", false,
         "train/val/test class counts; empty = 64:16:20 proportions"},
        {"episode.n_way", ValueType::kInt, "", true, "classes per episode"},
        {"episode.k_shot", ValueType::kInt, "", true, "support instances per class"},
        {"episode.t_query", ValueType::kInt, "", true, "query instances per class"},
        {"episode.labeled_ratio", ValueType::kReal, "1", false, "labeled share of support"},
        {"model.backbone", ValueType::kString, "convnet4", false, "convnet4 | resnet12"},
        {"model.channels", ValueType::kString, "", false,
         "four comma-separated block widths; empty = architecture default"},
        {"model.leaky_slope", ValueType::kReal, "0.1", false, "ResNet-12 LeakyReLU slope"},
        {"model.classifier", ValueType::kString, "proto", false, "proto | tpn"},
        {"model.distance", ValueType::kString, "euclidean", false,
         "euclidean | squared_euclidean"},
        {"model.adapt_mode", ValueType::kString, "full_episode", false,
         "full_episode | support_only | off"},
        {"model.adapt.d", ValueType::kInt, "64", false, "first adapter layer kernels"},
        {"model.adapt.f", ValueType::kInt, "32", false, "second adapter layer kernels"},
        {"model.adapt.hidden_activation", ValueType::kString, "relu", false, "layers 1-2"},
        {"model.adapt.output_activation", ValueType::kString, "sigmoid", false, "layer 3"},
        {"model.strategy", ValueType::kString, "semi", false,
         "semi | supervised (use of unlabeled support)"},
        {"train.init_lr", ValueType::kReal, "auto", false,
         "auto = 1e-3 for convnet4, 1e-4 for resnet12"},
        {"train.decay_every", ValueType::kInt, "10000", false, "halve lr every N iterations"},
        {"train.iterations", ValueType::kInt, "1000", false, "training episodes"},
        {"train.seed", ValueType::kInt, "1", false, "init and episode stream seed"},
        {"train.val_cadence", ValueType::kInt, "100", false, "0 disables validation"},
        {"train.val_episodes", ValueType::kInt, "100", false, "episodes per validation"},
        {"train.meta_batch", ValueType::kInt, "1", false, "episodes per update"},
        {"eval.episodes", ValueType::kInt, "600", false, "test episodes"},
        {"eval.seed", ValueType::kInt, "2024", false, "test episode seed"},
        {"tpn.alpha", ValueType::kReal, "0.99", false, "propagation strength in (0,1)"},
        {"tpn.graph_k", ValueType::kString, "full", false, "neighbour count or 'full'"},
        {"run.root", ValueType::kString, "runs", false, "parent directory of run dirs"},
    };
    std::sort(s.begin(), s.end(), [](const KeySpec& a, const KeySpec& b) { return a.key < b.key; });
    return s;
  }();
  return schema;
}

std::string suggest_key(const std::string& unknown) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& k : config_schema()) {
    const auto d = edit_distance(unknown, k.key);
    if (d < best_d) {
      best_d = d;
      best = k.key;
    }
  }
  return best_d <= std::max<std::size_t>(3, unknown.size() / 4) ? best : std::string{};
}

ExperimentConfig ExperimentConfig::parse(std::string_view text, const std::string& source) {
  ExperimentConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) {
    const auto hint = suggest_key(key);
    throw ConfigError("unknown key '" + key + "'" +
                      (hint.empty() ? std::string{} : "; did you mean '" + hint + "'?"));
  }
  if (spec->type == ValueType::kInt) {
    std::uint64_t v;
    if (!parse_int(value, v)) throw ConfigError(key + " expects a non-negative integer, got '" + value + "'");
  } else if (spec->type == ValueType::kReal && !(key == "train.init_lr" && value == "auto")) {
    double v;
    if (!parse_real(value, v)) throw ConfigError(key + " expects a number, got '" + value + "'");
  }
  values_[key] = value;
}

void ExperimentConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string ExperimentConfig::get(const std::string& key) const {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) throw ConfigError("unknown key '" + key + "'");
  const auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  if (spec->required) throw ConfigError("missing required key '" + key + "'");
  return spec->default_value;
}

double ExperimentConfig::get_real(const std::string& key) const {
  if (key == "train.init_lr" && get(key) == "auto") {
    return parse_architecture(get("model.backbone")) == Architecture::kResNet12 ? 1e-4 : 1e-3;
  }
  double v = 0;
  const auto s = get(key);
  if (!parse_real(s, v)) throw ConfigError(key + " expects a number, got '" + s + "'");
  return v;
}

std::size_t ExperimentConfig::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key) const {
  std::uint64_t v = 0;
  const auto s = get(key);
  if (!parse_int(s, v)) throw ConfigError(key + " expects a non-negative integer, got '" + s + "'");
  return v;
}

void ExperimentConfig::validate() const {
  for (const auto& k : config_schema()) {
    if (k.required && !is_set(k.key)) throw ConfigError("missing required key '" + k.key + "'");
  }
  const auto source = get("data.source");
  if (source != "synthetic" && source != "folder" && source != "archive") {
    throw ConfigError("data.source must be synthetic, folder or archive, got '" + source + "'");
  }
  if ((source == "folder" || source == "archive") && get("data.path").empty()) {
    throw ConfigError("data.path is required when data.source = " + source);
  }
  if (source == "folder" && get("data.manifest").empty()) {
    throw ConfigError("data.manifest is required when data.source = folder");
  }
  episode_spec_from(*this).validate();
  model_config_from(*this);
  if (!(get_real("train.init_lr") > 0.0)) throw ConfigError("train.init_lr must be positive");
  if (get_size("train.decay_every") == 0) throw ConfigError("train.decay_every must be positive");
  if (get_size("train.meta_batch") == 0) throw ConfigError("train.meta_batch must be positive");
  const double alpha = get_real("tpn.alpha");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("tpn.alpha must lie strictly inside (0,1)");
}

std::string ExperimentConfig::resolved_text() const {
  std::ostringstream out;
  for (const auto& k : config_schema()) {
    std::string v;
    if (k.key == "train.init_lr") {
      v = format_real(get_real(k.key));
    } else if (k.required && !is_set(k.key)) {
      continue;
    } else {
      v = get(k.key);
    }
    out << k.key << " = " << v << "\n";
  }
  return out.str();
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : resolved_text()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

EpisodeSpec episode_spec_from(const ExperimentConfig& cfg) {
  EpisodeSpec spec;
  spec.n_way = cfg.get_size("episode.n_way");
  spec.k_shot = cfg.get_size("episode.k_shot");
  spec.t_query = cfg.get_size("episode.t_query");
  spec.labeled_ratio = cfg.get_real("episode.labeled_ratio");
  return spec;
}

ModelConfig model_config_from(const ExperimentConfig& cfg) {
  ModelConfig m;
  m.backbone.arch = parse_architecture(cfg.get("model.backbone"));
  const auto channels = cfg.get("model.channels");
  if (!channels.empty()) m.backbone.channels = parse_size_list(channels, ',', "model.channels");
  m.backbone.leaky_slope = cfg.get_real("model.leaky_slope");
  m.image_shape = parse_image_shape(cfg.get("data.image_size"));
  m.backbone.in_channels = m.image_shape.channels;
  m.spec = episode_spec_from(cfg);
  m.strategy = parse_strategy(cfg.get("model.strategy"));
  m.adapt_mode = parse_adapt_mode(cfg.get("model.adapt_mode"));
  m.adapt_d = cfg.get_size("model.adapt.d");
  m.adapt_f = cfg.get_size("model.adapt.f");
  m.hidden_activation = parse_activation(cfg.get("model.adapt.hidden_activation"));
  m.output_activation = parse_activation(cfg.get("model.adapt.output_activation"));
  m.classifier = parse_classifier(cfg.get("model.classifier"));
  m.distance = parse_distance(cfg.get("model.distance"));
  m.tpn_alpha = cfg.get_real("tpn.alpha");
  const auto k = cfg.get("tpn.graph_k");
  if (k == "full") {
    m.tpn_graph_k = 0;
  } else {
    std::uint64_t v = 0;
    if (!parse_int(k, v)) throw ConfigError("tpn.graph_k must be an integer or 'full'");
    m.tpn_graph_k = v;
  }
  m.seed = cfg.get_u64("train.seed");
  m.backbone.resolved_channels();
  return m;
}

SyntheticParams synthetic_params_from(const ExperimentConfig& cfg) {
  SyntheticParams p;
  p.num_classes = cfg.get_size("data.synth.classes");
  p.per_class = cfg.get_size("data.synth.per_class");
  p.image_shape = parse_image_shape(cfg.get("data.image_size"));
  p.separation = cfg.get_real("data.synth.separation");
  p.seed = cfg.get_u64("data.synth.seed");
  return p;
}

namespace {

PoolSet split_by_config(const ClassPool& pool, const ExperimentConfig& cfg) {
  const auto text = cfg.get("data.synth.split");
  const std::size_t total = pool.classes.size();
  if (text.empty()) {
    std::size_t train = (total * 64 + 50) / 100;
    std::size_t val = (total * 16 + 50) / 100;
    train = std::max<std::size_t>(train, 1);
    val = std::max<std::size_t>(val, 1);
    if (train + val >= total) throw ConfigError("too few classes for a 64/16/20 split");
    return split_pool(pool, train, val, total - train - val);
  }
  const auto parts = parse_size_list(text, '/', "data.synth.split");
  if (parts.size() != 3) throw ConfigError("data.synth.split must be train/val/test counts");
  return split_pool(pool, parts[0], parts[1], parts[2]);
}

}  // namespace

PoolSet load_pools(const ExperimentConfig& cfg) {
  const auto source = cfg.get("data.source");
  if (source == "synthetic") return split_by_config(make_synthetic_pool(synthetic_params_from(cfg)), cfg);
  if (source == "archive") {
    const auto pool = load_synthetic_archive(cfg.get("data.path"));
    if (!(pool.image_shape == parse_image_shape(cfg.get("data.image_size")))) {
      throw ConfigError("archive images are " + to_string(pool.image_shape) +
                        " but data.image_size is " + cfg.get("data.image_size"));
    }
    return split_by_config(pool, cfg);
  }
  if (source == "folder") {
    return load_image_folder(cfg.get("data.path"), parse_image_shape(cfg.get("data.image_size")),
                             cfg.get("data.manifest"));
  }
  throw ConfigError("data.source must be synthetic, folder or archive, got '" + source + "'");
}

}  // namespace eaen
