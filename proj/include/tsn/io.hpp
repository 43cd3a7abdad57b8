#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tsn/common.hpp"
#include "tsn/tensor.hpp"

namespace tsn {

// Flat binary array container: one ASCII header line "arr <dtype> <d0> <d1> ...",
// then the raw little-endian payload. dtype is one of f32/f64/i64/bit; bit
// payloads are packed LSB-first over the logical element count.
namespace io {

inline void write_header(std::ofstream& os, const char* dtype,
                         const std::vector<int64_t>& shape) {
  os << "arr " << dtype;
  for (int64_t d : shape) os << ' ' << d;
  os << '\n';
}

inline std::vector<int64_t> read_header(std::ifstream& is, const std::string& path,
                                        std::string* dtype_out) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("empty array file: " + path);
  std::istringstream hs(line);
  std::string magic, dtype;
  hs >> magic >> dtype;
  if (magic != "arr") throw InvalidInput("bad array header in " + path);
  std::vector<int64_t> shape;
  int64_t d;
  while (hs >> d) shape.push_back(d);
  if (shape.empty()) throw InvalidInput("array header has no shape in " + path);
  *dtype_out = dtype;
  return shape;
}

template <typename T>
void write_array(const std::filesystem::path& path, const char* dtype,
                 const std::vector<T>& values, const std::vector<int64_t>& shape) {
  require(Tensor::numel_of(shape) == static_cast<int64_t>(values.size()),
          "write_array: shape does not match value count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidInput("cannot open for write: " + path.string());
  write_header(os, dtype, shape);
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!os) throw InvalidInput("write failed: " + path.string());
}

template <typename T>
std::vector<T> read_array(const std::filesystem::path& path, const char* dtype,
                          std::vector<int64_t>* shape_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open: " + path.string());
  std::string dtype_found;
  auto shape = read_header(is, path.string(), &dtype_found);
  if (dtype_found != dtype)
    throw InvalidInput("expected dtype " + std::string(dtype) + " got " + dtype_found +
                       " in " + path.string());
  std::vector<T> values(static_cast<size_t>(Tensor::numel_of(shape)));
  is.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!is) throw InvalidInput("truncated array file: " + path.string());
  if (shape_out) *shape_out = shape;
  return values;
}

inline void write_f32(const std::filesystem::path& p, const std::vector<float>& v,
                      const std::vector<int64_t>& shape) {
  write_array(p, "f32", v, shape);
}
inline std::vector<float> read_f32(const std::filesystem::path& p,
                                   std::vector<int64_t>* shape = nullptr) {
  return read_array<float>(p, "f32", shape);
}

inline void write_f64(const std::filesystem::path& p, const std::vector<double>& v,
                      const std::vector<int64_t>& shape) {
  write_array(p, "f64", v, shape);
}
inline std::vector<double> read_f64(const std::filesystem::path& p,
                                    std::vector<int64_t>* shape = nullptr) {
  return read_array<double>(p, "f64", shape);
}

inline void write_i64(const std::filesystem::path& p, const std::vector<int64_t>& v,
                      const std::vector<int64_t>& shape) {
  write_array(p, "i64", v, shape);
}
inline std::vector<int64_t> read_i64(const std::filesystem::path& p,
                                     std::vector<int64_t>* shape = nullptr) {
  return read_array<int64_t>(p, "i64", shape);
}

inline void write_bits(const std::filesystem::path& path, const MaskVec& bits,
                       const std::vector<int64_t>& shape) {
  require(Tensor::numel_of(shape) == static_cast<int64_t>(bits.size()),
          "write_bits: shape does not match bit count");
  std::vector<uint8_t> packed((bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidInput("cannot open for write: " + path.string());
  write_header(os, "bit", shape);
  os.write(reinterpret_cast<const char*>(packed.data()),
           static_cast<std::streamsize>(packed.size()));
  if (!os) throw InvalidInput("write failed: " + path.string());
}

inline MaskVec read_bits(const std::filesystem::path& path,
                         std::vector<int64_t>* shape_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open: " + path.string());
  std::string dtype;
  auto shape = read_header(is, path.string(), &dtype);
  if (dtype != "bit") throw InvalidInput("expected dtype bit in " + path.string());
  const size_t n = static_cast<size_t>(Tensor::numel_of(shape));
  std::vector<uint8_t> packed((n + 7) / 8);
  is.read(reinterpret_cast<char*>(packed.data()),
          static_cast<std::streamsize>(packed.size()));
  if (!is) throw InvalidInput("truncated bit file: " + path.string());
  MaskVec bits(n);
  for (size_t i = 0; i < n; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  if (shape_out) *shape_out = shape;
  return bits;
}

// Flat "key = value" text files (task specs, metadata). Order-preserving write;
// '#' starts a comment line.
using KvMap = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline KvMap read_kv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open: " + path.string());
  KvMap kv;
  std::string line;
  while (std::getline(is, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == '[') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) throw InvalidInput("bad key-value line in " + path.string() + ": " + line);
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

inline void write_kv(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, std::string>>& items) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot open for write: " + path.string());
  for (const auto& [k, v] : items) os << k << " = " << v << '\n';
}

inline const std::string& kv_get(const KvMap& kv, const std::string& key,
                                 const std::string& where) {
  auto it = kv.find(key);
  if (it == kv.end()) throw InvalidInput("missing key '" + key + "' in " + where);
  return it->second;
}

}  // namespace io
}  // namespace tsn
