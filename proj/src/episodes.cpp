#include "eaen/episodes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <cstdio>

namespace eaen {

static_assert(std::endian::native == std::endian::little, "archives assume little-endian hosts");

ImageShape parse_image_shape(const std::string& text) {
  ImageShape s;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> s.width >> x1 >> s.height >> x2 >> s.channels) || x1 != 'x' || x2 != 'x' ||
      s.width == 0 || s.height == 0 || s.channels == 0) {
    throw ConfigError("image size must look like WxHxC with positive values, got '" + text + "'");
  }
  return s;
}

std::string to_string(const ImageShape& s) {
  return std::to_string(s.width) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.channels);
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "'");
}

std::size_t ClassPool::instance_count() const {
  std::size_t n = 0;
  for (const auto& [id, items] : instances_by_class) n += items.size();
  return n;
}

const ClassPool& PoolSet::get(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return test;
}

namespace {

Normalization estimate_normalization(const ClassPool& pool) {
  const std::size_t c = pool.image_shape.channels;
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  std::size_t count = 0;
  const std::size_t plane = pool.image_shape.width * pool.image_shape.height;
  for (const auto& [id, items] : pool.instances_by_class) {
    for (const auto& inst : items) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = inst.image->pixels[ch * plane + i];
          sum[ch] += v;
          sq[ch] += v * v;
        }
      }
      count += plane;
    }
  }
  Normalization norm;
  if (count == 0) return norm;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = sum[ch] / static_cast<double>(count);
    const double var = std::max(sq[ch] / static_cast<double>(count) - mean * mean, 0.0);
    norm.mean.push_back(mean);
    norm.stddev.push_back(std::max(std::sqrt(var), 1e-6));
  }
  return norm;
}

}  // namespace

PoolSet make_pool_set(ClassPool train, ClassPool val, ClassPool test) {
  std::set<int> seen;
  for (const ClassPool* p : {&train, &val, &test}) {
    for (int c : p->classes) {
      if (!seen.insert(c).second) {
        throw DataError("class " + std::to_string(c) + " appears in more than one split");
      }
    }
  }
  train.split = Split::kTrain;
  val.split = Split::kVal;
  test.split = Split::kTest;
  train.normalization = estimate_normalization(train);
  val.normalization = train.normalization;
  test.normalization = train.normalization;
  return {std::move(train), std::move(val), std::move(test)};
}

std::size_t EpisodeSpec::labeled_per_class() const {
  const double raw = labeled_ratio * static_cast<double>(k_shot);
  const double rounded = std::round(raw);
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0) || std::abs(raw - rounded) > 1e-9 ||
      rounded < 1.0) {
    throw ConfigError("labeled_ratio " + std::to_string(labeled_ratio) + " times k_shot " +
                      std::to_string(k_shot) + " is not a positive integer");
  }
  return static_cast<std::size_t>(rounded);
}

void EpisodeSpec::validate() const {
  if (n_way == 0 || k_shot == 0 || t_query == 0) {
    throw ConfigError("n_way, k_shot and t_query must be positive");
  }
  labeled_per_class();
}

std::vector<std::size_t> Episode::query_labels() const {
  std::vector<std::size_t> out;
  out.reserve(query.size());
  for (const auto& q : query) out.push_back(q.label);
  return out;
}

Episode sample_episode(const ClassPool& pool, const EpisodeSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<int> classes = pool.classes;
  std::sort(classes.begin(), classes.end());
  if (classes.size() < spec.n_way) {
    throw ConfigError(to_string(pool.split) + " pool has " + std::to_string(classes.size()) +
                      " classes, episode needs " + std::to_string(spec.n_way));
  }
  // Partial Fisher-Yates over the sorted class list.
  for (std::size_t i = 0; i < spec.n_way; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, classes.size() - 1);
    std::swap(classes[i], classes[pick(rng)]);
  }

  Episode ep;
  ep.n_way = spec.n_way;
  ep.normalization = pool.normalization;
  ep.class_map.assign(classes.begin(), classes.begin() + static_cast<long>(spec.n_way));
  ep.support.reserve(spec.support_size());
  ep.query.reserve(spec.query_size());

  const std::size_t needed = spec.k_shot + spec.t_query;
  std::vector<std::vector<Instance>> chosen(spec.n_way);
  for (std::size_t label = 0; label < spec.n_way; ++label) {
    const int cls = ep.class_map[label];
    const auto it = pool.instances_by_class.find(cls);
    const std::size_t have = it == pool.instances_by_class.end() ? 0 : it->second.size();
    if (have < needed) {
      const auto name = pool.class_names.count(cls) ? pool.class_names.at(cls)
                                                    : std::to_string(cls);
      throw DataError("class '" + name + "' has " + std::to_string(have) +
                      " instances, episode needs " + std::to_string(needed));
    }
    std::vector<Instance> items = it->second;
    std::sort(items.begin(), items.end(),
              [](const Instance& a, const Instance& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < needed; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
      std::swap(items[i], items[pick(rng)]);
    }
    items.resize(needed);
    chosen[label] = std::move(items);
  }
  for (std::size_t label = 0; label < spec.n_way; ++label) {
    for (std::size_t s = 0; s < spec.k_shot; ++s) {
      ep.support.push_back({chosen[label][s], label, true});
    }
  }
  for (std::size_t label = 0; label < spec.n_way; ++label) {
    for (std::size_t q = 0; q < spec.t_query; ++q) {
      ep.query.push_back({chosen[label][spec.k_shot + q], label, true});
    }
  }
  return ep;
}

Episode apply_label_mask(Episode episode, const EpisodeSpec& spec, Rng& rng) {
  const std::size_t labeled = spec.labeled_per_class();
  const std::size_t k = episode.support_per_class();
  if (k != spec.k_shot) {
    throw ContractError("label mask expects " + std::to_string(spec.k_shot) +
                        " support items per class, episode has " + std::to_string(k));
  }
  if (labeled == k) {
    for (auto& item : episode.support) item.labeled = true;
    return episode;
  }
  std::vector<std::size_t> shots(k);
  for (std::size_t c = 0; c < episode.n_way; ++c) {
    std::iota(shots.begin(), shots.end(), std::size_t{0});
    for (std::size_t i = 0; i < labeled; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, k - 1);
      std::swap(shots[i], shots[pick(rng)]);
    }
    for (std::size_t s = 0; s < k; ++s) episode.support[c * k + s].labeled = false;
    for (std::size_t i = 0; i < labeled; ++i) episode.support[c * k + shots[i]].labeled = true;
  }
  return episode;
}

Episode draw_episode(const ClassPool& pool, const EpisodeSpec& spec, Rng& rng) {
  return apply_label_mask(sample_episode(pool, spec, rng), spec, rng);
}

Episode drop_unlabeled_support(const Episode& episode) {
  Episode out = episode;
  out.support.clear();
  for (const auto& item : episode.support) {
    if (item.labeled) out.support.push_back(item);
  }
  if (out.n_way && out.support.size() % out.n_way != 0) {
    throw ProtocolError("unequal labeled counts across classes");
  }
  return out;
}

Tensor episode_batch(const Episode& episode) {
  if (episode.size() == 0) throw ContractError("empty episode");
  const ImageShape shape = episode.support.empty() ? episode.query.front().instance.image->shape
                                                   : episode.support.front().instance.image->shape;
  Tensor batch({episode.size(), shape.channels, shape.height, shape.width});
  const std::size_t plane = shape.width * shape.height;
  std::size_t row = 0;
  auto put = [&](const EpisodeItem& item) {
    const Image& img = *item.instance.image;
    if (!(img.shape == shape)) {
      throw DataError("mixed image sizes in one episode: " + to_string(shape) + " vs " +
                      to_string(img.shape));
    }
    double* out = batch.data() + row * shape.pixels();
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const double mean = episode.normalization.empty() ? 0.0 : episode.normalization.mean[c];
      const double sd = episode.normalization.empty() ? 1.0 : episode.normalization.stddev[c];
      for (std::size_t i = 0; i < plane; ++i) {
        out[c * plane + i] = (img.pixels[c * plane + i] - mean) / sd;
      }
    }
    ++row;
  };
  for (const auto& item : episode.support) put(item);
  for (const auto& item : episode.query) put(item);
  return batch;
}

ClassPool make_synthetic_pool(const SyntheticParams& params) {
  if (params.num_classes < 2 || params.per_class < 2) {
    throw ConfigError("synthetic pool needs at least 2 classes and 2 instances per class");
  }
  const ImageShape shape = params.image_shape;
  if (shape.width == 0 || shape.height == 0 || shape.channels == 0) {
    throw ConfigError("synthetic image dimensions must be positive");
  }
  if (!(params.separation >= 0.0) || !std::isfinite(params.separation)) {
    throw ConfigError("class separation must be a finite non-negative number");
  }
  constexpr int kBlobs = 3;
  constexpr double kNoise = 0.1;
  const double w = static_cast<double>(shape.width), h = static_cast<double>(shape.height);
  const std::size_t plane = shape.width * shape.height;

  ClassPool pool;
  pool.image_shape = shape;
  std::uint64_t next_id = 0;
  for (std::size_t c = 0; c < params.num_classes; ++c) {
    Rng class_rng = make_rng(params.seed, 2 * c);
    std::uniform_real_distribution<double> unit(0.0, 1.0), sym(-1.0, 1.0);
    std::vector<double> mean(shape.pixels(), 0.5);
    for (int b = 0; b < kBlobs; ++b) {
      const double cx = unit(class_rng) * w, cy = unit(class_rng) * h;
      const double radius = (0.15 + 0.2 * unit(class_rng)) * std::min(w, h);
      std::vector<double> colour(shape.channels);
      for (auto& v : colour) v = sym(class_rng);
      for (std::size_t y = 0; y < shape.height; ++y) {
        for (std::size_t x = 0; x < shape.width; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
          for (std::size_t ch = 0; ch < shape.channels; ++ch) {
            mean[ch * plane + y * shape.width + x] += params.separation / 6.0 * colour[ch] * g;
          }
        }
      }
    }
    Rng noise_rng = make_rng(params.seed, 2 * c + 1);
    std::normal_distribution<double> noise(0.0, kNoise);
    const int cls = static_cast<int>(c);
    auto& items = pool.instances_by_class[cls];
    for (std::size_t i = 0; i < params.per_class; ++i) {
      auto img = std::make_shared<Image>();
      img->shape = shape;
      img->pixels.resize(shape.pixels());
      for (std::size_t p = 0; p < shape.pixels(); ++p) {
        img->pixels[p] = static_cast<float>(std::clamp(mean[p] + noise(noise_rng), 0.0, 1.0));
      }
      items.push_back({next_id++, std::move(img)});
    }
    pool.classes.push_back(cls);
    char name[32];
    std::snprintf(name, sizeof name, "class_%03zu", c);
    pool.class_names[cls] = name;
  }
  return pool;
}

PoolSet split_pool(const ClassPool& pool, std::size_t train_classes, std::size_t val_classes,
                   std::size_t test_classes) {
  if (train_classes + val_classes + test_classes > pool.classes.size()) {
    throw ConfigError("split " + std::to_string(train_classes) + "/" +
                      std::to_string(val_classes) + "/" + std::to_string(test_classes) +
                      " needs more classes than the pool has (" +
                      std::to_string(pool.classes.size()) + ")");
  }
  std::vector<int> ids = pool.classes;
  std::sort(ids.begin(), ids.end());
  ClassPool parts[3];
  const std::size_t bounds[3] = {train_classes, train_classes + val_classes,
                                 train_classes + val_classes + test_classes};
  std::size_t part = 0;
  for (std::size_t i = 0; i < bounds[2]; ++i) {
    while (i >= bounds[part]) ++part;
    const int id = ids[i];
    ClassPool& p = parts[part];
    p.image_shape = pool.image_shape;
    p.classes.push_back(id);
    p.instances_by_class[id] = pool.instances_by_class.at(id);
    if (pool.class_names.count(id)) p.class_names[id] = pool.class_names.at(id);
  }
  for (auto& p : parts) p.image_shape = pool.image_shape;
  return make_pool_set(std::move(parts[0]), std::move(parts[1]), std::move(parts[2]));
}

namespace {

constexpr char kPoolMagic[8] = {'E', 'A', 'E', 'N', 'P', 'O', 'O', 'L'};
constexpr std::uint32_t kPoolVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated pool archive");
  return v;
}

}  // namespace

void save_synthetic_archive(const std::filesystem::path& path, const SyntheticParams& params,
                            const ClassPool& pool) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kPoolMagic, sizeof kPoolMagic);
  put(out, kPoolVersion);
  put<std::uint64_t>(out, pool.classes.size());
  put<std::uint64_t>(out, params.per_class);
  put<std::uint64_t>(out, pool.image_shape.width);
  put<std::uint64_t>(out, pool.image_shape.height);
  put<std::uint64_t>(out, pool.image_shape.channels);
  put<double>(out, params.separation);
  put<std::uint64_t>(out, params.seed);
  for (int cls : pool.classes) {
    const auto& items = pool.instances_by_class.at(cls);
    put<std::int64_t>(out, cls);
    put<std::uint64_t>(out, items.size());
    for (const auto& inst : items) {
      put<std::uint64_t>(out, inst.id);
      out.write(reinterpret_cast<const char*>(inst.image->pixels.data()),
                static_cast<std::streamsize>(inst.image->pixels.size() * sizeof(float)));
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

ClassPool load_synthetic_archive(const std::filesystem::path& path, SyntheticParams* params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kPoolMagic)) {
    throw IoError(path.string() + " is not a pool archive");
  }
  if (get<std::uint32_t>(in) != kPoolVersion) throw IoError("unsupported pool archive version");
  SyntheticParams p;
  p.num_classes = get<std::uint64_t>(in);
  p.per_class = get<std::uint64_t>(in);
  p.image_shape.width = get<std::uint64_t>(in);
  p.image_shape.height = get<std::uint64_t>(in);
  p.image_shape.channels = get<std::uint64_t>(in);
  p.separation = get<double>(in);
  p.seed = get<std::uint64_t>(in);
  ClassPool pool;
  pool.image_shape = p.image_shape;
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    const int cls = static_cast<int>(get<std::int64_t>(in));
    const auto count = get<std::uint64_t>(in);
    auto& items = pool.instances_by_class[cls];
    for (std::uint64_t i = 0; i < count; ++i) {
      auto img = std::make_shared<Image>();
      img->shape = p.image_shape;
      img->pixels.resize(p.image_shape.pixels());
      const std::uint64_t id = get<std::uint64_t>(in);
      in.read(reinterpret_cast<char*>(img->pixels.data()),
              static_cast<std::streamsize>(img->pixels.size() * sizeof(float)));
      if (!in) throw IoError("truncated pool archive");
      items.push_back({id, std::move(img)});
    }
    pool.classes.push_back(cls);
    char name[32];
    std::snprintf(name, sizeof name, "class_%03d", cls);
    pool.class_names[cls] = name;
  }
  std::sort(pool.classes.begin(), pool.classes.end());
  if (params) *params = p;
  return pool;
}

}  // namespace eaen
