#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "eaen/rng.hpp"
#include "eaen/tensor.hpp"

namespace eaen {

struct ImageShape {
  std::size_t width = 0, height = 0, channels = 0;
  std::size_t pixels() const noexcept { return width * height * channels; }
  bool operator==(const ImageShape&) const = default;
};

// "WxHxC", e.g. "84x84x3".
ImageShape parse_image_shape(const std::string& text);
std::string to_string(const ImageShape& s);

// Pixel values in [0,1], stored CHW.
struct Image {
  ImageShape shape;
  std::vector<float> pixels;
};

struct Instance {
  std::uint64_t id = 0;  // unique within a pool set
  std::shared_ptr<const Image> image;
};

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& s);

// Per-channel standardisation, estimated on the training split.
struct Normalization {
  std::vector<double> mean, stddev;
  bool empty() const noexcept { return mean.empty(); }
};

struct ClassPool {
  Split split = Split::kTrain;
  ImageShape image_shape;
  std::vector<int> classes;  // sorted global class ids
  std::map<int, std::vector<Instance>> instances_by_class;
  std::map<int, std::string> class_names;
  Normalization normalization;

  std::size_t instance_count() const;
};

struct PoolSet {
  ClassPool train, val, test;
  const ClassPool& get(Split s) const;
};

// Builds the three split pools. Throws DataError when a class lands in more
// than one split. Normalisation statistics come from `train` and are copied
// to every split.
PoolSet make_pool_set(ClassPool train, ClassPool val, ClassPool test);

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t t_query = 15;
  double labeled_ratio = 1.0;

  // labeled_ratio * k_shot, or ConfigError when it is not a positive integer.
  std::size_t labeled_per_class() const;
  std::size_t support_size() const noexcept { return n_way * k_shot; }
  std::size_t query_size() const noexcept { return n_way * t_query; }
  std::size_t episode_size() const noexcept { return n_way * (k_shot + t_query); }
  void validate() const;
  bool operator==(const EpisodeSpec&) const = default;
};

struct EpisodeItem {
  Instance instance;
  std::size_t label = 0;  // episode-local class in [0, N)
  bool labeled = true;    // queries are always flagged true; the flag is unused for them
};

// Support items are ordered by (class, shot), queries by (class, index).
struct Episode {
  std::size_t n_way = 0;
  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> query;
  std::vector<int> class_map;  // episode-local index -> global class id
  Normalization normalization;

  std::size_t support_per_class() const { return n_way ? support.size() / n_way : 0; }
  std::size_t query_per_class() const { return n_way ? query.size() / n_way : 0; }
  std::size_t size() const noexcept { return support.size() + query.size(); }
  std::vector<std::size_t> query_labels() const;
};

// Draws N classes, then K+T distinct instances of each (first K support, rest
// query). Instances within a class are indexed in id order, so the result
// does not depend on pool storage order. Every support item is labeled.
Episode sample_episode(const ClassPool& pool, const EpisodeSpec& spec, Rng& rng);

// Flags exactly labeled_ratio*K support items of each class as labeled.
Episode apply_label_mask(Episode episode, const EpisodeSpec& spec, Rng& rng);

// sample_episode followed by apply_label_mask.
Episode draw_episode(const ClassPool& pool, const EpisodeSpec& spec, Rng& rng);

// Removes unlabeled support items (the "supervised" semi-supervised strategy).
Episode drop_unlabeled_support(const Episode& episode);

// Canonically ordered NCHW batch: all support items, then all queries,
// standardised with the episode's normalisation.
Tensor episode_batch(const Episode& episode);

struct SyntheticParams {
  std::size_t num_classes = 10;
  std::size_t per_class = 50;
  ImageShape image_shape{32, 32, 3};
  double separation = 3.0;
  std::uint64_t seed = 7;
};

// One class = one mean image built from a few Gaussian blobs whose amplitude
// scales with `separation`, plus i.i.d. N(0, 0.1^2) pixel noise, clipped to
// [0,1]. Separation 0 makes every class mean the same flat grey image.
ClassPool make_synthetic_pool(const SyntheticParams& params);

// Splits a pool by class id order into train/val/test class counts.
PoolSet split_pool(const ClassPool& pool, std::size_t train_classes, std::size_t val_classes,
                   std::size_t test_classes);

// Binary archive: "EAENPOOL", u32 version, u64 classes, u64 per_class,
// u64 width, u64 height, u64 channels, f64 separation, u64 seed, then per
// class (i64 id, u64 count, count x (u64 instance id, float32 pixels)).
void save_synthetic_archive(const std::filesystem::path& path, const SyntheticParams& params,
                            const ClassPool& pool);
ClassPool load_synthetic_archive(const std::filesystem::path& path,
                                 SyntheticParams* params = nullptr);

struct FolderLoadStats {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
};

// root/<class_name>/<image files>; manifest lines are "class_name<TAB>split".
// Images are resized bilinearly to `shape` and scaled to [0,1].
PoolSet load_image_folder(const std::filesystem::path& root, const ImageShape& shape,
                          const std::filesystem::path& manifest,
                          FolderLoadStats* stats = nullptr);

}  // namespace eaen
