#pragma once

// Binary weight files, little-endian:
//   "ACTW" | u32 version | u32 kind_len | kind bytes | u32 count
//   then per array: u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
// Writes go to a temporary file that is renamed into place.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/tensor.hpp"

namespace active {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct WeightFile {
  std::string kind;
  std::vector<NamedArray> arrays;

  const NamedArray& find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw std::runtime_error("weight file has no array named '" + name + "'");
  }
};

inline constexpr std::uint32_t kWeightFileVersion = 1;

namespace io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of file");
  return v;
}

/// Writes via `path.tmp` and renames so readers never see a partial file.
template <class Fn>
void atomic_write(const std::filesystem::path& path, Fn&& fn) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    fn(os);
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace io

inline void write_weights(const std::filesystem::path& path, const WeightFile& wf) {
  io::atomic_write(path, [&](std::ostream& os) {
    os.write("ACTW", 4);
    io::put<std::uint32_t>(os, kWeightFileVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(wf.kind.size()));
    os.write(wf.kind.data(), static_cast<std::streamsize>(wf.kind.size()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(wf.arrays.size()));
    for (const auto& a : wf.arrays) {
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
      os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) io::put<std::uint64_t>(os, d);
      os.write(reinterpret_cast<const char*>(a.data.data()),
               static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
  });
}

inline WeightFile read_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weight file " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ACTW", 4) != 0) throw std::runtime_error(path.string() + " is not a weight file");
  const auto version = io::get<std::uint32_t>(is);
  if (version != kWeightFileVersion)
    throw std::runtime_error("unsupported weight file version " + std::to_string(version));
  WeightFile wf;
  wf.kind.resize(io::get<std::uint32_t>(is));
  is.read(wf.kind.data(), static_cast<std::streamsize>(wf.kind.size()));
  const auto count = io::get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name.resize(io::get<std::uint32_t>(is));
    is.read(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    const auto rank = io::get<std::uint32_t>(is);
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(io::get<std::uint64_t>(is));
    a.data.resize(numel(a.shape));
    is.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated weight file " + path.string());
    wf.arrays.push_back(std::move(a));
  }
  return wf;
}

/// A named trainable tensor.
struct Parameter {
  std::string name;
  Tensor value;
};

inline std::vector<NamedArray> to_arrays(const std::vector<Parameter>& params) {
  std::vector<NamedArray> out;
  for (const auto& p : params)
    out.push_back({p.name, p.value.shape(), std::vector<double>(p.value.data().begin(), p.value.data().end())});
  return out;
}

inline void load_arrays(std::vector<Parameter>& params, const WeightFile& wf) {
  for (auto& p : params) {
    const auto& a = wf.find(p.name);
    if (a.shape != p.value.shape())
      throw ShapeError("weight '" + p.name + "' has shape " + shape_string(a.shape) + ", model expects " +
                       shape_string(p.value.shape()));
    std::copy(a.data.begin(), a.data.end(), p.value.mutable_data().begin());
  }
}

}  // namespace active
