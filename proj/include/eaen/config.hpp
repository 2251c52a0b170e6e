#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "eaen/episodes.hpp"
#include "eaen/model.hpp"

namespace eaen {

enum class ValueType { kString, kInt, kReal };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string default_value;  // empty + required => must be supplied
  bool required = false;
  std::string help;
};

// The full list of accepted configuration keys, sorted by key.
const std::vector<KeySpec>& config_schema();

// Flat experiment description read from `key = value` lines ('#' starts a
// comment). Unknown keys are rejected with a suggestion.
class ExperimentConfig {
 public:
  ExperimentConfig() = default;

  static ExperimentConfig parse(std::string_view text, const std::string& source = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  // Validates key and value type.
  void set(const std::string& key, const std::string& value);
  // "key=value"
  void set_override(const std::string& assignment);

  bool is_set(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  // Throws ConfigError when a required key is missing.
  void validate() const;

  // Every key with its effective value, one `key = value` line each, sorted.
  // Derived defaults (train.init_lr) are written out resolved.
  std::string resolved_text() const;
  // FNV-1a of resolved_text(), 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

// Closest schema key by edit distance, or "" when nothing is close.
std::string suggest_key(const std::string& unknown);

ModelConfig model_config_from(const ExperimentConfig& cfg);
EpisodeSpec episode_spec_from(const ExperimentConfig& cfg);
PoolSet load_pools(const ExperimentConfig& cfg);
SyntheticParams synthetic_params_from(const ExperimentConfig& cfg);

}  // namespace eaen
