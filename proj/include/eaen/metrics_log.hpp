#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace eaen {

// One flat record per evaluation. Reals are written with round-trip
// precision; wall_time is the only field expected to differ between reruns.
struct MetricRecord {
  std::size_t iteration = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
  double ci95 = -1.0;        // written when >= 0
  std::size_t episodes = 0;  // written when > 0
};

nlohmann::json to_json(const MetricRecord& r);
MetricRecord metric_from_json(const nlohmann::json& j);

// Appends one JSON object per line.
void append_record(const std::filesystem::path& log, const nlohmann::json& record);
std::vector<nlohmann::json> read_records(const std::filesystem::path& log);

}  // namespace eaen
