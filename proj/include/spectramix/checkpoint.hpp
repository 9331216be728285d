#pragma once

// Binary checkpoint, all integers little-endian:
//
//   "SPMX" | u32 version | u64 n | n bytes of JSON metadata | u64 entry count
//   per entry: u32 name length | name | u32 ndim | ndim × u64 extent | f64 values
//   u32 CRC-32 of every preceding byte
//
// Optimizer moments are not stored; a resumed run restarts them at zero.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectramix/nn.hpp"
#include "spectramix/tensor.hpp"

namespace spectramix {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'M', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Tensor value;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

inline std::vector<CheckpointEntry> entries_from(const ParameterSet& ps) {
  std::vector<CheckpointEntry> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back({p.name, p.value});
  return out;
}

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

  void need(std::size_t n, const char* what) const {
    if (static_cast<std::size_t>(end_ - p_) < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
  }
  template <class U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p_[i]) << (8 * i);
    p_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>("tensor values")); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::set<std::string> names;
  for (const auto& e : ckpt.entries) {
    if (!names.insert(e.name).second) throw CheckpointError("duplicate checkpoint entry " + e.name);
  }
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  const std::string meta = ckpt.metadata.dump();
  w.uint<std::uint64_t>(meta.size());
  w.bytes(meta.data(), meta.size());
  w.uint<std::uint64_t>(ckpt.entries.size());
  for (const auto& e : ckpt.entries) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.uint<std::uint64_t>(d);
    for (double v : e.value.values()) w.f64(v);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_of(buf.data(), buf.size());
  w.uint<std::uint32_t>(crc);
  return std::move(buf);
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 8 + 8 + 4) throw CheckpointError("checkpoint too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + body, 4);
  const auto stored = tail.uint<std::uint32_t>("crc");
  const auto actual = crc32_of(bytes.data(), body);
  if (stored != actual) throw CheckpointError("checkpoint CRC mismatch (file is corrupt)");

  detail::ByteReader r(bytes.data() + 4, body - 4);
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = r.uint<std::uint64_t>("metadata length");
  const std::string meta = r.str(meta_len, "metadata");
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  const auto count = r.uint<std::uint64_t>("entry count");
  std::set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.uint<std::uint32_t>("entry name length");
    std::string name = r.str(name_len, "entry name");
    if (!names.insert(name).second) throw CheckpointError("duplicate checkpoint entry " + name);
    const auto ndim = r.uint<std::uint32_t>("entry rank");
    if (ndim == 0) throw CheckpointError("entry " + name + " has rank 0");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto extent = r.uint<std::uint64_t>("entry shape");
      if (extent == 0 || numel > r.remaining() / 8 / extent) {
        throw CheckpointError("entry " + name + " has an implausible shape");
      }
      numel *= extent;
      shape.push_back(extent);
    }
    r.need(numel * 8, "tensor values");
    Tensor t(std::move(shape));
    for (std::size_t k = 0; k < numel; ++k) t[k] = r.f64();
    ckpt.entries.push_back({std::move(name), std::move(t)});
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after the last checkpoint entry");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace spectramix
