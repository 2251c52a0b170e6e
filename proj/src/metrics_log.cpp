#include "eaen/metrics_log.hpp"

#include <fstream>

#include "eaen/errors.hpp"

namespace eaen {

nlohmann::json to_json(const MetricRecord& r) {
  nlohmann::json j = {{"iteration", r.iteration}, {"split", r.split},     {"loss", r.loss},
                      {"accuracy", r.accuracy},   {"lr", r.lr},           {"wall_time", r.wall_time}};
  if (r.ci95 >= 0.0) j["ci95"] = r.ci95;
  if (r.episodes > 0) j["episodes"] = r.episodes;
  return j;
}

MetricRecord metric_from_json(const nlohmann::json& j) {
  MetricRecord r;
  r.iteration = j.at("iteration").get<std::size_t>();
  r.split = j.at("split").get<std::string>();
  r.loss = j.at("loss").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.lr = j.at("lr").get<double>();
  r.wall_time = j.at("wall_time").get<double>();
  if (j.contains("ci95")) r.ci95 = j["ci95"].get<double>();
  if (j.contains("episodes")) r.episodes = j["episodes"].get<std::size_t>();
  return r;
}

void append_record(const std::filesystem::path& log, const nlohmann::json& record) {
  std::ofstream out(log, std::ios::app);
  if (!out) throw IoError("cannot append to metrics log " + log.string());
  out << record.dump() << "\n";
}

std::vector<nlohmann::json> read_records(const std::filesystem::path& log) {
  std::ifstream in(log);
  if (!in) throw IoError("cannot read metrics log " + log.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace eaen
