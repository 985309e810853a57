#pragma once

// File formats and byte-level plumbing: PPM/PGM frames, the ELFW weight
// container, key = value config files, CRC32 and FNV-1a hashes.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "elfvc/tensor.hpp"

namespace elfvc {

class CodecModel;

// ---------------------------------------------------------------- hashing ----

uint32_t crc32(const uint8_t* data, size_t n);
inline uint32_t crc32(const std::vector<uint8_t>& v) {
  return crc32(v.data(), v.size());
}
uint64_t fnv1a64(const uint8_t* data, size_t n);

// ---------------------------------------------------------------- byte IO ----

struct ByteWriter {
  std::vector<uint8_t> bytes;

  void u8(uint8_t v) { bytes.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void raw(const uint8_t* p, size_t n) { bytes.insert(bytes.end(), p, p + n); }
  void raw(const std::vector<uint8_t>& v) { raw(v.data(), v.size()); }
  void text(const std::string& s) {
    raw(reinterpret_cast<const uint8_t*>(s.data()), s.size());
  }
};

// Bounds-checked little-endian reader; throws std::runtime_error("truncated
// ...") past the end.
struct ByteReader {
  const uint8_t* p = nullptr;
  size_t n = 0;
  size_t pos = 0;

  ByteReader(const uint8_t* data, size_t size) : p(data), n(size) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : p(v.data()), n(v.size()) {}

  size_t remaining() const { return n - pos; }
  void need(size_t k) const;
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  std::vector<uint8_t> raw(size_t k);
  std::string text(size_t k);
};

// ------------------------------------------------------------- PPM / PGM ----

// Binary P6, 8-bit, values mapped to [0,1] by /255 -> (3,H,W).
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& rgb);

// Binary P5, 8-bit -> (1,H,W).
Tensor read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& gray);

// ------------------------------------------------------------ weight file ----

// Magic "ELFW", u8 version, u32 tensor count; per tensor u16 name length,
// UTF-8 name, u8 rank, u32 dims, little-endian f32 payload.  The loader
// upcasts to f64.
std::vector<uint8_t> serialize_weights(
    const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> parse_weights(
    const std::vector<uint8_t>& bytes);

void save_weights_file(const std::string& path,
                       const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> load_weights_file(const std::string& path);

// Model-level helpers: parameters plus normalization buffers, in registry
// order.  restore is strict (every expected tensor present, shapes equal,
// no strangers).  The model hash is FNV-1a over the serialized bytes, so it
// is stable across save/load round trips.
std::vector<std::pair<std::string, Tensor>> snapshot_model(CodecModel& model);
void restore_model(CodecModel& model,
                   const std::vector<std::pair<std::string, Tensor>>& entries);
uint64_t model_hash(CodecModel& model);
void save_model(const std::string& path, CodecModel& model);
void load_model(const std::string& path, CodecModel& model);

// ----------------------------------------------------------------- config ----

// UTF-8 text, one `key = value` per line; '#' starts a comment; blank lines
// ignored.  Typed getters throw std::runtime_error on malformed values.
struct Config {
  std::map<std::string, std::string> kv;

  bool has(const std::string& key) const { return kv.count(key) != 0; }
  std::string get_str(const std::string& key, const std::string& dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
};

Config parse_config(const std::string& text);
Config read_config_file(const std::string& path);

// ------------------------------------------------------------- file utils ----

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
// Lexicographically sorted regular files with the given extension.
std::vector<std::string> list_files(const std::string& dir, const std::string& ext);

}  // namespace elfvc
