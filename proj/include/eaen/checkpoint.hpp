#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "eaen/tensor.hpp"

namespace eaen {

// Single-file archive of named, shape-tagged float64 arrays plus string
// metadata.
//
// Layout (little-endian): "EAENCKPT", u32 version, u64 #meta, then
// (str key, str value)*, u64 #tensors, then (str name, u32 rank,
// u64 dims[rank], f64 data[prod(dims)])*. A str is u64 length + bytes.
//
// Tensor names:
//   backbone.block<i>.<layer>.{weight,gamma,beta,running_mean,running_var}
//   adapter.{wp,wz,wa}
//   classifier.tpn.scale
//   optim.adam.{m,v}.<parameter name>
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const std::string& require_meta(const std::string& key) const;
  const Tensor& require_tensor(const std::string& name) const;
};

}  // namespace eaen
