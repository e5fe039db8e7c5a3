#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cmtc/tensor.hpp"

namespace cmtc {

// Flat parameter container: named entries of (dtype, shape, little-endian
// raw values) behind a versioned header. Round-trips are bit-exact.
//
// Layout:
//   magic  "CMTCCKPT"            8 bytes
//   version u32                  currently 1
//   count   u64
//   entry*  (sorted by name):
//     name_len u32, name bytes
//     dtype    u8   (0=f32, 1=f64, 2=u64, 3=u8)
//     rank     u8
//     dims     u64 * rank
//     raw values

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U64 = 2, U8 = 3 };

namespace detail_ckpt {

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32:
      return 4;
    case DType::F64:
      return 8;
    case DType::U64:
      return 8;
    case DType::U8:
      return 1;
  }
  throw IoError("checkpoint: unknown dtype");
}

template <typename T>
DType dtype_of();
template <>
inline DType dtype_of<float>() {
  return DType::F32;
}
template <>
inline DType dtype_of<double>() {
  return DType::F64;
}
template <>
inline DType dtype_of<std::uint64_t>() {
  return DType::U64;
}
template <>
inline DType dtype_of<std::uint8_t>() {
  return DType::U8;
}

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;
  std::string where;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) {
      throw IoError("checkpoint: truncated file " + where);
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return *p++;
  }
};

template <typename T>
void encode_values(std::string& buf, const std::vector<T>& vals) {
  if constexpr (sizeof(T) == 1) {
    buf.append(reinterpret_cast<const char*>(vals.data()), vals.size());
  } else if constexpr (sizeof(T) == 4) {
    for (const T v : vals) {
      put_u32(buf, std::bit_cast<std::uint32_t>(v));
    }
  } else {
    for (const T v : vals) {
      put_u64(buf, std::bit_cast<std::uint64_t>(v));
    }
  }
}

template <typename T>
std::vector<T> decode_values(Reader& r, std::size_t n) {
  std::vector<T> out(n);
  if constexpr (sizeof(T) == 1) {
    r.need(n);
    std::memcpy(out.data(), r.p, n);
    r.p += n;
  } else if constexpr (sizeof(T) == 4) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<T>(r.u32());
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<T>(r.u64());
  }
  return out;
}

}  // namespace detail_ckpt

class Checkpoint {
 public:
  struct Entry {
    DType dtype;
    Shape shape;
    std::string raw;  // little-endian payload
  };

  template <typename T>
  void put(const std::string& name, const std::vector<T>& values, Shape shape) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("checkpoint: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values for '" + name + "'");
    }
    Entry e;
    e.dtype = detail_ckpt::dtype_of<T>();
    e.shape = std::move(shape);
    detail_ckpt::encode_values(e.raw, values);
    entries_[name] = std::move(e);
  }

  template <typename T>
  void put_scalar(const std::string& name, T value) {
    put<T>(name, {value}, {1});
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint: no entry named '" + name + "'");
    return it->second;
  }

  template <typename T>
  std::vector<T> get(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != detail_ckpt::dtype_of<T>()) {
      throw IoError("checkpoint: dtype mismatch for '" + name + "'");
    }
    const std::size_t n = e.raw.size() / detail_ckpt::dtype_size(e.dtype);
    detail_ckpt::Reader r{reinterpret_cast<const std::uint8_t*>(e.raw.data()),
                          reinterpret_cast<const std::uint8_t*>(e.raw.data()) + e.raw.size(),
                          "entry '" + name + "'"};
    return detail_ckpt::decode_values<T>(r, n);
  }

  template <typename T>
  T get_scalar(const std::string& name) const {
    auto v = get<T>(name);
    if (v.size() != 1) throw IoError("checkpoint: '" + name + "' is not a scalar");
    return v[0];
  }

  const Shape& shape(const std::string& name) const { return entry(name).shape; }

  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  void save(const std::string& path) const {
    std::string buf;
    buf.append("CMTCCKPT", 8);
    detail_ckpt::put_u32(buf, 1);
    detail_ckpt::put_u64(buf, entries_.size());
    for (const auto& [name, e] : entries_) {  // std::map iterates sorted
      detail_ckpt::put_u32(buf, static_cast<std::uint32_t>(name.size()));
      buf.append(name);
      buf.push_back(static_cast<char>(e.dtype));
      buf.push_back(static_cast<char>(e.shape.size()));
      for (auto d : e.shape) detail_ckpt::put_u64(buf, static_cast<std::uint64_t>(d));
      detail_ckpt::put_u64(buf, e.raw.size());
      buf.append(e.raw);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail_ckpt::Reader r{reinterpret_cast<const std::uint8_t*>(data.data()),
                          reinterpret_cast<const std::uint8_t*>(data.data()) + data.size(), path};
    r.need(8);
    if (std::memcmp(r.p, "CMTCCKPT", 8) != 0) {
      throw IoError("checkpoint: bad magic in '" + path + "'");
    }
    r.p += 8;
    const auto version = r.u32();
    if (version != 1) {
      throw IoError("checkpoint: unsupported version " + std::to_string(version) + " in '" + path +
                    "'");
    }
    const auto count = r.u64();
    Checkpoint ck;
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto name_len = r.u32();
      r.need(name_len);
      std::string name(reinterpret_cast<const char*>(r.p), name_len);
      r.p += name_len;
      Entry e;
      const auto dt = r.u8();
      if (dt > 3) throw IoError("checkpoint: bad dtype for '" + name + "'");
      e.dtype = static_cast<DType>(dt);
      const auto rank = r.u8();
      e.shape.resize(rank);
      for (auto& d : e.shape) d = static_cast<std::int64_t>(r.u64());
      const auto len = r.u64();
      r.need(len);
      e.raw.assign(reinterpret_cast<const char*>(r.p), len);
      r.p += len;
      if (len != static_cast<std::uint64_t>(numel(e.shape)) * detail_ckpt::dtype_size(e.dtype)) {
        throw IoError("checkpoint: payload size mismatch for '" + name + "'");
      }
      ck.entries_[name] = std::move(e);
    }
    return ck;
  }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace cmtc
