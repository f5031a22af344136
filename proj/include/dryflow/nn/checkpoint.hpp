// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dryflow/error.hpp"
#include "dryflow/nn/optim.hpp"
#include "dryflow/nn/params.hpp"
#include "dryflow/tensor.hpp"

namespace dryflow::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'Y', 'F', 'L', 'O', 'W', 'C'};

enum class CheckpointKind : std::uint32_t { encoder = 1, flow = 2, normalization = 3, optimizer = 4 };

inline const char* to_string(CheckpointKind k) {
  switch (k) {
    case CheckpointKind::encoder: return "encoder";
    case CheckpointKind::flow: return "flow";
    case CheckpointKind::normalization: return "normalization";
    case CheckpointKind::optimizer: return "optimizer";
  }
  return "unknown";
}

/// Self-describing binary container: a JSON header plus named dense tensors.
///
///   magic[8] "DRYFLOWC" | u32 version | u32 kind | u64 step
///   u64 header_len | header (UTF-8 JSON)
///   u64 tensor_count | per tensor: u32 name_len | name | u32 dtype_bytes
///                                  | i64 rows | i64 cols | row-major data
///
/// Integers are little-endian; dtype_bytes is 4 (float32) or 8 (float64).
struct Checkpoint {
  struct Tensor {
    std::string name;
    std::uint32_t dtype_bytes = 4;
    std::int64_t rows = 0, cols = 0;
    std::vector<unsigned char> data;
  };

  CheckpointKind kind = CheckpointKind::encoder;
  std::uint64_t step = 0;
  nlohmann::json header = nlohmann::json::object();
  std::vector<Tensor> tensors;

  template <class T>
  void put(const std::string& name, const Matrix<T>& m) {
    Tensor t{name, sizeof(T), m.rows(), m.cols(), {}};
    t.data.resize(sizeof(T) * static_cast<std::size_t>(m.size()));
    std::memcpy(t.data.data(), m.data(), t.data.size());
    tensors.push_back(std::move(t));
  }

  bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }

  template <class T>
  Matrix<T> get(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name != name) continue;
      Matrix<T> m(t.rows, t.cols);
      const auto n = static_cast<std::size_t>(m.size());
      if (t.dtype_bytes == 4) {
        std::vector<float> buf(n);
        std::memcpy(buf.data(), t.data.data(), 4 * n);
        for (std::size_t i = 0; i < n; ++i) m.data()[i] = static_cast<T>(buf[i]);
      } else {
        std::vector<double> buf(n);
        std::memcpy(buf.data(), t.data.data(), 8 * n);
        for (std::size_t i = 0; i < n; ++i) m.data()[i] = static_cast<T>(buf[i]);
      }
      return m;
    }
    fail(ErrorKind::data, "checkpoint has no tensor '", name, "'");
  }

  template <class T>
  void put_params(const ParamStore<T>& store, const std::string& prefix = "") {
    for (std::size_t i = 0; i < store.size(); ++i) put(prefix + store.name(i), store.value(i));
  }

  /// Copies every parameter of `store` from the checkpoint; shapes must match.
  template <class T>
  void get_params(ParamStore<T>& store, const std::string& prefix = "") const {
    for (std::size_t i = 0; i < store.size(); ++i) {
      Matrix<T> m = get<T>(prefix + store.name(i));
      require(m.rows() == store.value(i).rows() && m.cols() == store.value(i).cols(), ErrorKind::data,
              "checkpoint tensor ", prefix + store.name(i), " has shape ", m.rows(), "x", m.cols(), ", expected ",
              store.value(i).rows(), "x", store.value(i).cols());
      store.value(i) = std::move(m);
    }
  }

  /// Checksum over tensor names, shapes and bytes (header excluded).
  std::uint64_t weight_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors) {
      h = fnv1a(t.name.data(), t.name.size(), h);
      const std::int64_t shape[2] = {t.rows, t.cols};
      h = fnv1a(shape, sizeof(shape), h);
      h = fnv1a(t.data.data(), t.data.size(), h);
    }
    return h;
  }

  std::string serialize() const {
    std::string out(kCheckpointMagic, 8);
    auto raw = [&out](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
    const auto kind_u = static_cast<std::uint32_t>(kind);
    raw(&kCheckpointVersion, 4);
    raw(&kind_u, 4);
    raw(&step, 8);
    const std::string h = header.dump();
    const std::uint64_t hl = h.size();
    raw(&hl, 8);
    out += h;
    const std::uint64_t count = tensors.size();
    raw(&count, 8);
    for (const auto& t : tensors) {
      const auto nl = static_cast<std::uint32_t>(t.name.size());
      raw(&nl, 4);
      out += t.name;
      raw(&t.dtype_bytes, 4);
      raw(&t.rows, 8);
      raw(&t.cols, 8);
      raw(t.data.data(), t.data.size());
    }
    return out;
  }

  static Checkpoint deserialize(const std::string& bytes, const std::string& origin = "<buffer>") {
    std::size_t pos = 0;
    auto take = [&](void* dst, std::size_t n) {
      require(pos + n <= bytes.size(), ErrorKind::data, origin, ": truncated checkpoint");
      std::memcpy(dst, bytes.data() + pos, n);
      pos += n;
    };
    char magic[8];
    take(magic, 8);
    require(std::memcmp(magic, kCheckpointMagic, 8) == 0, ErrorKind::data, origin, ": not a dryflow checkpoint");
    std::uint32_t version = 0, kind_u = 0;
    take(&version, 4);
    require(version == kCheckpointVersion, ErrorKind::data, origin, ": checkpoint format version ", version,
            " is not supported (expected ", kCheckpointVersion, ")");
    take(&kind_u, 4);
    Checkpoint c;
    c.kind = static_cast<CheckpointKind>(kind_u);
    take(&c.step, 8);
    std::uint64_t hl = 0;
    take(&hl, 8);
    require(pos + hl <= bytes.size(), ErrorKind::data, origin, ": truncated header");
    c.header = nlohmann::json::parse(bytes.substr(pos, hl));
    pos += hl;
    std::uint64_t count = 0;
    take(&count, 8);
    for (std::uint64_t i = 0; i < count; ++i) {
      Tensor t;
      std::uint32_t nl = 0;
      take(&nl, 4);
      require(pos + nl <= bytes.size(), ErrorKind::data, origin, ": truncated tensor name");
      t.name = bytes.substr(pos, nl);
      pos += nl;
      take(&t.dtype_bytes, 4);
      require(t.dtype_bytes == 4 || t.dtype_bytes == 8, ErrorKind::data, origin, ": bad dtype");
      take(&t.rows, 8);
      take(&t.cols, 8);
      require(t.rows >= 0 && t.cols >= 0, ErrorKind::data, origin, ": bad tensor shape");
      t.data.resize(static_cast<std::size_t>(t.rows * t.cols) * t.dtype_bytes);
      take(t.data.data(), t.data.size());
      c.tensors.push_back(std::move(t));
    }
    return c;
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::data, "cannot write checkpoint ", path.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::data, "write failed for ", path.string());
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::data, "cannot open checkpoint ", path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes, path.string());
  }

  static Checkpoint load(const std::filesystem::path& path, CheckpointKind expected) {
    Checkpoint c = load(path);
    require(c.kind == expected, ErrorKind::data, path.string(), ": expected a ", to_string(expected),
            " checkpoint, found ", to_string(c.kind));
    return c;
  }
};

/// Stores AdamW moments and step count under `prefix`.
template <class T>
void put_optimizer(Checkpoint& c, const AdamW<T>& opt, const ParamStore<T>& store, const std::string& prefix) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    c.put(prefix + "m." + store.name(i), opt.first_moment().values[i]);
    c.put(prefix + "v." + store.name(i), opt.second_moment().values[i]);
  }
  c.header[prefix + "step_count"] = opt.step_count();
}

template <class T>
AdamW<T> get_optimizer(const Checkpoint& c, const ParamStore<T>& store, const std::string& prefix) {
  AdamW<T> opt(store);
  for (std::size_t i = 0; i < store.size(); ++i) {
    opt.first_moment().values[i] = c.get<T>(prefix + "m." + store.name(i));
    opt.second_moment().values[i] = c.get<T>(prefix + "v." + store.name(i));
    require(opt.first_moment().values[i].rows() == store.value(i).rows() &&
                opt.first_moment().values[i].cols() == store.value(i).cols(),
            ErrorKind::data, "optimizer state for ", store.name(i), " has the wrong shape");
  }
  opt.set_step_count(c.header.at(prefix + "step_count").get<std::int64_t>());
  return opt;
}

}  // namespace dryflow::nn
