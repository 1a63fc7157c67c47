#pragma once

// File IO helpers: FNV-1a hashing for manifests, raw little-endian array
// bundles for checkpoints, and thin wrappers around nlohmann::json.

#include <glosmo/common.hpp>

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and read/written via memcpy");

namespace glosmo {

using json = nlohmann::json;

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dependency_error("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  std::streamoff n = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
  if (n > 0) in.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!in) throw corruption_error("short read: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const void* data, std::size_t n) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error("cannot open file for writing: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw error("short write: " + path);
}

inline std::uint64_t file_fnv1a64(const std::string& path) {
  auto bytes = read_file_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dependency_error("cannot open file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw format_error("invalid JSON: " + path);
  return j;
}

inline void write_json_file(const std::string& path, const json& j) {
  std::string text = j.dump(2);
  text.push_back('\n');
  write_file_bytes(path, text.data(), text.size());
}

// Named dense arrays serialized as one raw blob plus a JSON manifest entry
// per array. Matrices are stored row-major, exactly as Eigen lays them out.
class ArrayStore {
 public:
  struct Entry {
    std::string dtype;  // "f32" or "f64"
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::uint64_t offset = 0;
    std::uint64_t byte_size = 0;
  };

  void put(const std::string& name, const MatF& m) { put_impl(name, "f32", m); }
  void put(const std::string& name, const MatD& m) { put_impl(name, "f64", m); }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  MatF get_f32(const std::string& name) const { return get_impl<float>(name, "f32"); }
  MatD get_f64(const std::string& name) const { return get_impl<double>(name, "f64"); }

  json manifest() const {
    json arrays = json::object();
    for (const auto& [name, e] : entries_) {
      arrays[name] = {{"dtype", e.dtype},
                      {"rows", e.rows},
                      {"cols", e.cols},
                      {"offset", e.offset},
                      {"byte_size", e.byte_size}};
    }
    return arrays;
  }

  void save_blob(const std::string& bin_path) const {
    write_file_bytes(bin_path, blob_.data(), blob_.size());
  }

  static ArrayStore load(const std::string& bin_path, const json& arrays) {
    ArrayStore s;
    s.blob_ = read_file_bytes(bin_path);
    if (!arrays.is_object()) throw format_error("array manifest is not an object");
    for (auto it = arrays.begin(); it != arrays.end(); ++it) {
      const json& e = it.value();
      Entry entry;
      entry.dtype = e.at("dtype").get<std::string>();
      entry.rows = e.at("rows").get<std::int64_t>();
      entry.cols = e.at("cols").get<std::int64_t>();
      entry.offset = e.at("offset").get<std::uint64_t>();
      entry.byte_size = e.at("byte_size").get<std::uint64_t>();
      std::size_t elem = entry.dtype == "f32" ? 4 : entry.dtype == "f64" ? 8 : 0;
      if (elem == 0) throw format_error("unknown dtype for array " + it.key());
      if (entry.byte_size !=
          static_cast<std::uint64_t>(entry.rows) * static_cast<std::uint64_t>(entry.cols) * elem)
        throw corruption_error("array " + it.key() + ": byte size does not match shape");
      if (entry.offset + entry.byte_size > s.blob_.size())
        throw corruption_error("array " + it.key() + ": extends past end of blob " + bin_path);
      s.entries_[it.key()] = entry;
    }
    return s;
  }

 private:
  template <typename S>
  void put_impl(const std::string& name, const char* dtype, const Mat<S>& m) {
    Entry e;
    e.dtype = dtype;
    e.rows = m.rows();
    e.cols = m.cols();
    e.offset = blob_.size();
    e.byte_size = static_cast<std::uint64_t>(m.size()) * sizeof(S);
    blob_.resize(blob_.size() + e.byte_size);
    if (m.size() > 0) std::memcpy(blob_.data() + e.offset, m.data(), e.byte_size);
    entries_[name] = e;
  }

  template <typename S>
  Mat<S> get_impl(const std::string& name, const char* dtype) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw corruption_error("missing array: " + name);
    const Entry& e = it->second;
    if (e.dtype != dtype)
      throw format_error("array " + name + " has dtype " + e.dtype + ", expected " + dtype);
    Mat<S> m(e.rows, e.cols);
    if (m.size() > 0) std::memcpy(m.data(), blob_.data() + e.offset, e.byte_size);
    return m;
  }

  std::map<std::string, Entry> entries_;
  std::vector<std::uint8_t> blob_;
};

}  // namespace glosmo
