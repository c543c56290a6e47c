#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

// Single-file checkpoint container: little-endian, self-describing named
// arrays with a per-record checksum so truncation or corruption is detected
// before anything is loaded.
//
//   magic "QLCKPT1\n" | u64 record count | records...
//   record: u32 name_len | name | u8 dtype | u64 count | u64 fnv1a | payload

namespace quadloco::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2, U8 = 3 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I64: return 8;
    case DType::U8: return 1;
  }
  return 0;
}

inline std::uint64_t fnv1a(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

constexpr char kMagic[8] = {'Q', 'L', 'C', 'K', 'P', 'T', '1', '\n'};

class Writer {
 public:
  void add(const std::string& name, const float* p, long n) {
    add_raw(name, DType::F32, p, n);
  }
  void add(const std::string& name, const double* p, long n) {
    add_raw(name, DType::F64, p, n);
  }
  void add(const std::string& name, const std::int64_t* p, long n) {
    add_raw(name, DType::I64, p, n);
  }
  void add(const std::string& name, const std::uint8_t* p, long n) {
    add_raw(name, DType::U8, p, n);
  }
  void add_scalar(const std::string& name, std::int64_t v) { add(name, &v, 1); }
  void add_scalar(const std::string& name, double v) { add(name, &v, 1); }
  void add_text(const std::string& name, const std::string& text) {
    add_raw(name, DType::U8, text.data(), static_cast<long>(text.size()));
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t count = records_.size();
    out.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& r : records_) {
      const std::uint32_t len = static_cast<std::uint32_t>(r.name.size());
      out.write(reinterpret_cast<const char*>(&len), 4);
      out.write(r.name.data(), len);
      const std::uint8_t t = static_cast<std::uint8_t>(r.dtype);
      out.write(reinterpret_cast<const char*>(&t), 1);
      const std::uint64_t n = r.count;
      out.write(reinterpret_cast<const char*>(&n), 8);
      const std::uint64_t h = fnv1a(r.bytes.data(), r.bytes.size());
      out.write(reinterpret_cast<const char*>(&h), 8);
      out.write(reinterpret_cast<const char*>(r.bytes.data()),
                static_cast<std::streamsize>(r.bytes.size()));
    }
    if (!out) throw CheckpointError("short write to '" + path + "'");
  }

 private:
  struct Record {
    std::string name;
    DType dtype;
    std::uint64_t count;
    std::vector<std::uint8_t> bytes;
  };

  void add_raw(const std::string& name, DType t, const void* p, long n) {
    Record r;
    r.name = name;
    r.dtype = t;
    r.count = static_cast<std::uint64_t>(n);
    r.bytes.resize(static_cast<std::size_t>(n) * dtype_size(t));
    std::memcpy(r.bytes.data(), p, r.bytes.size());
    records_.push_back(std::move(r));
  }

  std::vector<Record> records_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
      throw CheckpointError("'" + path + "' is not a version-compatible checkpoint");
    std::uint64_t count = 0;
    if (!in.read(reinterpret_cast<char*>(&count), 8))
      throw CheckpointError("corrupted checkpoint: truncated header");
    for (std::uint64_t k = 0; k < count; ++k) {
      std::uint32_t len = 0;
      if (!in.read(reinterpret_cast<char*>(&len), 4) || len > 4096)
        throw CheckpointError("corrupted checkpoint: bad record name");
      std::string name(len, '\0');
      std::uint8_t t = 0;
      std::uint64_t n = 0, h = 0;
      if (!in.read(name.data(), len) ||
          !in.read(reinterpret_cast<char*>(&t), 1) ||
          !in.read(reinterpret_cast<char*>(&n), 8) ||
          !in.read(reinterpret_cast<char*>(&h), 8) || t > 3)
        throw CheckpointError("corrupted checkpoint: truncated record");
      Rec r;
      r.dtype = static_cast<DType>(t);
      r.count = n;
      r.bytes.resize(static_cast<std::size_t>(n) * dtype_size(r.dtype));
      if (!in.read(reinterpret_cast<char*>(r.bytes.data()),
                   static_cast<std::streamsize>(r.bytes.size())))
        throw CheckpointError("corrupted checkpoint: truncated payload in '" +
                              name + "'");
      if (fnv1a(r.bytes.data(), r.bytes.size()) != h)
        throw CheckpointError("corrupted checkpoint: checksum mismatch in '" +
                              name + "'");
      recs_.emplace(std::move(name), std::move(r));
    }
  }

  bool has(const std::string& name) const { return recs_.count(name) > 0; }

  void get(const std::string& name, float* dst, long n) const {
    copy_to(name, DType::F32, dst, n);
  }
  void get(const std::string& name, double* dst, long n) const {
    copy_to(name, DType::F64, dst, n);
  }
  void get(const std::string& name, std::int64_t* dst, long n) const {
    copy_to(name, DType::I64, dst, n);
  }
  void get(const std::string& name, std::uint8_t* dst, long n) const {
    copy_to(name, DType::U8, dst, n);
  }
  std::int64_t get_scalar_i64(const std::string& name) const {
    std::int64_t v = 0;
    get(name, &v, 1);
    return v;
  }
  double get_scalar_f64(const std::string& name) const {
    double v = 0;
    get(name, &v, 1);
    return v;
  }
  std::string get_text(const std::string& name) const {
    const Rec& r = find(name, DType::U8);
    return std::string(reinterpret_cast<const char*>(r.bytes.data()),
                       r.bytes.size());
  }

 private:
  struct Rec {
    DType dtype;
    std::uint64_t count;
    std::vector<std::uint8_t> bytes;
  };

  const Rec& find(const std::string& name, DType expect) const {
    auto it = recs_.find(name);
    if (it == recs_.end())
      throw CheckpointError("checkpoint is missing array '" + name + "'");
    if (it->second.dtype != expect)
      throw CheckpointError("checkpoint array '" + name + "' has wrong dtype");
    return it->second;
  }

  void copy_to(const std::string& name, DType t, void* dst, long n) const {
    const Rec& r = find(name, t);
    if (r.count != static_cast<std::uint64_t>(n))
      throw CheckpointError("checkpoint array '" + name +
                            "' has incompatible shape");
    std::memcpy(dst, r.bytes.data(), r.bytes.size());
  }

  std::map<std::string, Rec> recs_;
};

}  // namespace quadloco::ckpt
