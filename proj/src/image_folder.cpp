#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "eaen/episodes.hpp"

namespace eaen {

namespace {

std::map<std::string, Split> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot read split manifest " + manifest.string());
  std::map<std::string, Split> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ConfigError(manifest.string() + ":" + std::to_string(lineno) +
                        ": expected 'class_name<TAB>split'");
    }
    out[line.substr(0, tab)] = parse_split(line.substr(tab + 1));
  }
  return out;
}

std::shared_ptr<Image> decode(const std::filesystem::path& file, const ImageShape& shape) {
  const int flag = shape.channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR;
  cv::Mat raw = cv::imread(file.string(), flag);
  if (raw.empty()) return nullptr;
  if (shape.channels == 3) cv::cvtColor(raw, raw, cv::COLOR_BGR2RGB);
  cv::Mat resized;
  cv::resize(raw, resized, cv::Size(static_cast<int>(shape.width), static_cast<int>(shape.height)),
             0, 0, cv::INTER_LINEAR);
  cv::Mat scaled;
  resized.convertTo(scaled, CV_32F, 1.0 / 255.0);
  auto img = std::make_shared<Image>();
  img->shape = shape;
  img->pixels.resize(shape.pixels());
  const std::size_t plane = shape.width * shape.height;
  for (std::size_t y = 0; y < shape.height; ++y) {
    const float* row = scaled.ptr<float>(static_cast<int>(y));
    for (std::size_t x = 0; x < shape.width; ++x) {
      for (std::size_t c = 0; c < shape.channels; ++c) {
        img->pixels[c * plane + y * shape.width + x] = row[x * shape.channels + c];
      }
    }
  }
  return img;
}

}  // namespace

PoolSet load_image_folder(const std::filesystem::path& root, const ImageShape& shape,
                          const std::filesystem::path& manifest, FolderLoadStats* stats) {
  namespace fs = std::filesystem;
  if (shape.channels != 1 && shape.channels != 3) {
    throw ConfigError("image folders support 1 or 3 channels");
  }
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  const auto splits = read_manifest(manifest);

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  FolderLoadStats local;
  ClassPool parts[3];
  for (auto& p : parts) p.image_shape = shape;
  int next_class = 0;
  std::uint64_t next_id = 0;
  for (const auto& name : names) {
    const int cls = next_class++;
    const auto it = splits.find(name);
    if (it == splits.end()) {
      std::cerr << "warning: class directory '" << name << "' is not in the manifest, skipped\n";
      continue;
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / name)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Instance> items;
    for (const auto& f : files) {
      auto img = decode(f, shape);
      if (!img) {
        std::cerr << "warning: cannot decode " << f.string() << ", skipped\n";
        ++local.skipped;
        continue;
      }
      items.push_back({next_id++, std::move(img)});
      ++local.loaded;
    }
    if (items.empty()) throw DataError("class '" + name + "' has no readable images");
    ClassPool& pool = parts[static_cast<int>(it->second)];
    pool.classes.push_back(cls);
    pool.class_names[cls] = name;
    pool.instances_by_class[cls] = std::move(items);
  }
  for (const auto& [name, split] : splits) {
    if (!std::binary_search(names.begin(), names.end(), name)) {
      throw DataError("manifest lists class '" + name + "' but no such directory exists");
    }
  }
  if (stats) *stats = local;
  return make_pool_set(std::move(parts[0]), std::move(parts[1]), std::move(parts[2]));
}

}  // namespace eaen
