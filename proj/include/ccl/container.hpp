#pragma once

// Tensor container file:
//
//   bytes 0..7   magic "CCLDATA1"
//   bytes 8..15  u64 little-endian length L of the JSON header
//   next L bytes UTF-8 JSON header
//                {version, n, d, C, dtype, arrays:[{name, shape, offset, dtype}], ...}
//   payload      little-endian row-major arrays; offsets count from payload start
//
// The payload length must equal the end of the last array exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccl/errors.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

inline constexpr char kContainerMagic[8] = {'C', 'C', 'L', 'D', 'A', 'T', 'A', '1'};
inline constexpr int kContainerVersion = 1;

enum class DType { f32, i32, u8 };

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::i32: return "i32";
    case DType::u8: return "u8";
  }
  return "?";
}

inline std::size_t dtype_size(DType t) { return t == DType::u8 ? 1 : 4; }

inline DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "i32") return DType::i32;
  if (s == "u8") return DType::u8;
  throw FormatError("container: unknown dtype '" + s + "'");
}

struct ContainerArray {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  template <typename U>
  static ContainerArray of(std::string name, DType dtype, Shape shape, const std::vector<U>& values) {
    ContainerArray a;
    a.name = std::move(name);
    a.dtype = dtype;
    a.shape = std::move(shape);
    if (sizeof(U) != dtype_size(dtype)) throw ContractError("container: element size mismatch");
    if (values.size() != shape_numel(a.shape)) throw ContractError("container: value count mismatch");
    a.bytes.resize(values.size() * sizeof(U));
    if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), a.bytes.size());
    return a;
  }

  template <typename U>
  std::vector<U> as() const {
    if (sizeof(U) != dtype_size(dtype)) throw FormatError("container: array '" + name + "' has dtype " + dtype_name(dtype));
    std::vector<U> out(bytes.size() / sizeof(U));
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }
};

struct Container {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t classes = 0;
  // Extra header keys, written after the required ones.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
  std::vector<ContainerArray> arrays;

  const ContainerArray& get(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw FormatError("container: missing array '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

inline void write_container(const std::string& path, const Container& c) {
  nlohmann::ordered_json h;
  h["version"] = kContainerVersion;
  h["n"] = c.n;
  h["d"] = c.d;
  h["C"] = c.classes;
  h["dtype"] = "f32";
  auto arr = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    if (a.bytes.size() != shape_numel(a.shape) * dtype_size(a.dtype))
      throw ContractError("container: array '" + a.name + "' size does not match its shape");
    nlohmann::ordered_json e;
    e["name"] = a.name;
    e["shape"] = a.shape;
    e["offset"] = offset;
    e["dtype"] = dtype_name(a.dtype);
    arr.push_back(std::move(e));
    offset += a.bytes.size();
  }
  h["arrays"] = std::move(arr);
  for (auto it = c.extra.begin(); it != c.extra.end(); ++it) h[it.key()] = it.value();
  const std::string header = h.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("container: cannot open '" + path + "' for writing");
  out.write(kContainerMagic, 8);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& a : c.arrays)
    out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
  out.flush();
  if (!out) throw Error("container: write to '" + path + "' failed");
}

inline Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("container: cannot open '" + path + "'");
  std::vector<char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 16 || std::memcmp(file.data(), kContainerMagic, 8) != 0)
    throw FormatError("container: bad magic in '" + path + "'");
  std::uint64_t len = 0;
  std::memcpy(&len, file.data() + 8, sizeof(len));
  if (len > file.size() - 16) throw FormatError("container: header length exceeds file size");
  nlohmann::ordered_json h;
  try {
    h = nlohmann::ordered_json::parse(file.begin() + 16, file.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: header is not valid JSON: ") + e.what());
  }
  if (!h.is_object() || !h.contains("version") || !h["version"].is_number_integer())
    throw FormatError("container: header lacks a version");
  if (h["version"].get<int>() != kContainerVersion)
    throw FormatError("container: unsupported version " + h["version"].dump());

  Container c;
  try {
    c.n = h.at("n").get<std::size_t>();
    c.d = h.at("d").get<std::size_t>();
    c.classes = h.at("C").get<std::size_t>();
    const std::size_t payload_start = 16 + len;
    const std::size_t payload_size = file.size() - payload_start;
    std::size_t expected_end = 0;
    for (const auto& e : h.at("arrays")) {
      ContainerArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<Shape>();
      a.dtype = e.contains("dtype") ? parse_dtype(e["dtype"].get<std::string>()) : DType::f32;
      const auto off = e.at("offset").get<std::size_t>();
      const auto size = shape_numel(a.shape) * dtype_size(a.dtype);
      if (off + size > payload_size)
        throw FormatError("container: array '" + a.name + "' runs past the payload");
      a.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(payload_start + off),
                     file.begin() + static_cast<std::ptrdiff_t>(payload_start + off + size));
      expected_end = std::max(expected_end, off + size);
      c.arrays.push_back(std::move(a));
    }
    if (expected_end != payload_size)
      throw FormatError("container: payload is " + std::to_string(payload_size) + " bytes, header describes " +
                        std::to_string(expected_end));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: malformed header: ") + e.what());
  }
  for (auto it = h.begin(); it != h.end(); ++it) {
    const auto& k = it.key();
    if (k != "version" && k != "n" && k != "d" && k != "C" && k != "dtype" && k != "arrays")
      c.extra[k] = it.value();
  }
  return c;
}

}  // namespace ccl
