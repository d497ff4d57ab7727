// Copyright 2026 The refjoint Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Flat binary container: a versioned header followed by named, typed,
// shaped entries. Used for sample files and checkpoints.
//
// Layout (little-endian):
//   char[4]  magic "RJCT"
//   u32      format version
//   u32, []  kind tag length and bytes
//   u64      entry count
//   per entry, in name order:
//     u32, []  name length and bytes
//     u8       dtype (0 f64, 1 i64, 2 bit-packed, 3 utf8)
//     u32      rank, then u64 extents
//     u64, []  payload length and bytes

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refjoint/errors.hpp"
#include "refjoint/tensor.hpp"

namespace refjoint {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

inline constexpr char kContainerMagic[4] = {'R', 'J', 'C', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { kF64 = 0, kI64 = 1, kBits = 2, kUtf8 = 3 };

class Container {
 public:
  struct Entry {
    DType dtype = DType::kF64;
    Shape shape;
    std::vector<unsigned char> payload;
  };

  explicit Container(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  void put_f64(const std::string& name, Shape shape, std::span<const double> values) {
    check_count(name, shape, values.size());
    put_raw(name, DType::kF64, std::move(shape), values.data(), values.size_bytes());
  }

  void put_i64(const std::string& name, Shape shape, std::span<const std::int64_t> values) {
    check_count(name, shape, values.size());
    put_raw(name, DType::kI64, std::move(shape), values.data(), values.size_bytes());
  }

  // values are 0/1, packed LSB-first.
  void put_bits(const std::string& name, Shape shape, std::span<const std::uint8_t> values) {
    check_count(name, shape, values.size());
    std::vector<unsigned char> packed((values.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i]) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    }
    entries_[name] = Entry{DType::kBits, std::move(shape), std::move(packed)};
  }

  void put_text(const std::string& name, const std::string& text) {
    put_raw(name, DType::kUtf8, {text.size()}, text.data(), text.size());
  }

  std::vector<double> get_f64(const std::string& name, Shape* shape = nullptr) const {
    const Entry& e = typed(name, DType::kF64);
    if (shape) *shape = e.shape;
    std::vector<double> out(numel(e.shape));
    std::memcpy(out.data(), e.payload.data(), out.size() * sizeof(double));
    return out;
  }

  std::vector<std::int64_t> get_i64(const std::string& name, Shape* shape = nullptr) const {
    const Entry& e = typed(name, DType::kI64);
    if (shape) *shape = e.shape;
    std::vector<std::int64_t> out(numel(e.shape));
    std::memcpy(out.data(), e.payload.data(), out.size() * sizeof(std::int64_t));
    return out;
  }

  std::vector<std::uint8_t> get_bits(const std::string& name, Shape* shape = nullptr) const {
    const Entry& e = typed(name, DType::kBits);
    if (shape) *shape = e.shape;
    std::vector<std::uint8_t> out(numel(e.shape));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (e.payload[i / 8] >> (i % 8)) & 1u;
    return out;
  }

  std::string get_text(const std::string& name) const {
    const Entry& e = typed(name, DType::kUtf8);
    return std::string(e.payload.begin(), e.payload.end());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kContainerMagic, 4);
    write_pod(os, kContainerVersion);
    write_str(os, kind_);
    write_pod(os, static_cast<std::uint64_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      write_str(os, name);
      write_pod(os, static_cast<std::uint8_t>(e.dtype));
      write_pod(os, static_cast<std::uint32_t>(e.shape.size()));
      for (std::size_t d : e.shape) write_pod(os, static_cast<std::uint64_t>(d));
      write_pod(os, static_cast<std::uint64_t>(e.payload.size()));
      os.write(reinterpret_cast<const char*>(e.payload.data()),
               static_cast<std::streamsize>(e.payload.size()));
    }
    if (!os) throw IoError("write failed for " + path.string());
  }

  static Container load(const std::filesystem::path& path, const std::string& expected_kind) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const auto fail = [&](const std::string& why) {
      return IoError(path.string() + ": " + why);
    };
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kContainerMagic, 4) != 0) throw fail("not a refjoint container");
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kContainerVersion) {
      throw fail("unsupported format version " + std::to_string(version));
    }
    Container c(read_str(is));
    if (!expected_kind.empty() && c.kind_ != expected_kind) {
      throw fail("expected a '" + expected_kind + "' container, found '" + c.kind_ + "'");
    }
    const auto count = read_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count && is; ++i) {
      std::string name = read_str(is);
      Entry e;
      e.dtype = static_cast<DType>(read_pod<std::uint8_t>(is));
      const auto rank = read_pod<std::uint32_t>(is);
      for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(read_pod<std::uint64_t>(is));
      const auto bytes = read_pod<std::uint64_t>(is);
      if (bytes > (1ULL << 32)) throw fail("entry '" + name + "' is implausibly large");
      e.payload.resize(bytes);
      is.read(reinterpret_cast<char*>(e.payload.data()), static_cast<std::streamsize>(bytes));
      c.entries_[std::move(name)] = std::move(e);
    }
    if (!is) throw fail("truncated file");
    return c;
  }

 private:
  static void check_count(const std::string& name, const Shape& shape, std::size_t n) {
    if (numel(shape) != n) {
      throw DimensionError("entry '" + name + "' shape " + shape_str(shape) + " holds " +
                           std::to_string(numel(shape)) + " values, got " + std::to_string(n));
    }
  }

  void put_raw(const std::string& name, DType dtype, Shape shape, const void* bytes,
               std::size_t n) {
    Entry e{dtype, std::move(shape), std::vector<unsigned char>(n)};
    if (n) std::memcpy(e.payload.data(), bytes, n);
    entries_[name] = std::move(e);
  }

  const Entry& typed(const std::string& name, DType dtype) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("container has no entry '" + name + "'");
    if (it->second.dtype != dtype) throw IoError("entry '" + name + "' has unexpected type");
    const std::size_t n = numel(it->second.shape);
    std::size_t need = 0;
    switch (dtype) {
      case DType::kF64: need = n * sizeof(double); break;
      case DType::kI64: need = n * sizeof(std::int64_t); break;
      case DType::kBits: need = (n + 7) / 8; break;
      case DType::kUtf8: need = it->second.payload.size(); break;
    }
    if (it->second.payload.size() != need) {
      throw IoError("entry '" + name + "' payload size does not match its shape");
    }
    return it->second;
  }

  template <typename T>
  static void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  static void write_str(std::ostream& os, const std::string& s) {
    write_pod(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename T>
  static T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  static std::string read_str(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    if (!is || n > (1u << 20)) {
      is.setstate(std::ios::failbit);
      return {};
    }
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
  }

  std::string kind_;
  std::map<std::string, Entry> entries_;
};

}  // namespace refjoint
