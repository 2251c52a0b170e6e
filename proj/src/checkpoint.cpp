#include "eaen/checkpoint.hpp"

#include <fstream>

namespace eaen {

namespace {

constexpr char kMagic[8] = {'E', 'A', 'E', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in) {
  const auto len = get<std::uint64_t>(in);
  if (len > (1ull << 32)) throw IoError("corrupt checkpoint string length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint");
  return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    put<std::uint64_t>(out, meta.size());
    for (const auto& [k, v] : meta) {
      put_string(out, k);
      put_string(out, v);
    }
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
      put_string(out, name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw IoError(path.string() + " is not a checkpoint archive");
  }
  if (get<std::uint32_t>(in) != kVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  const auto n_meta = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    auto k = get_string(in);
    ck.meta[k] = get_string(in);
  }
  const auto n_tensors = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    auto name = get_string(in);
    const auto rank = get<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint tensor " + name);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

const std::string& Checkpoint::require_meta(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw IoError("checkpoint lacks metadata '" + key + "'");
  return it->second;
}

const Tensor& Checkpoint::require_tensor(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("checkpoint lacks tensor '" + name + "'");
  return it->second;
}

}  // namespace eaen
