#include "elfvc/dataio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "elfvc/model.hpp"
#include "elfvc/params.hpp"

namespace elfvc {

// ---------------------------------------------------------------- hashing ----

namespace {

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> t{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n) {
  static const std::array<uint32_t, 256> table = make_crc_table();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

uint64_t fnv1a64(const uint8_t* data, size_t n) {
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------- byte IO ----

void ByteWriter::u16(uint16_t v) {
  bytes.push_back(static_cast<uint8_t>(v & 0xFF));
  bytes.push_back(static_cast<uint8_t>(v >> 8));
}

void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

void ByteReader::need(size_t k) const {
  if (pos + k > n) {
    throw std::runtime_error("truncated data: need " + std::to_string(k) +
                             " bytes at offset " + std::to_string(pos) + " of " +
                             std::to_string(n));
  }
}

uint8_t ByteReader::u8() {
  need(1);
  return p[pos++];
}

uint16_t ByteReader::u16() {
  need(2);
  uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
  pos += 2;
  return v;
}

uint32_t ByteReader::u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

uint64_t ByteReader::u64() {
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::vector<uint8_t> ByteReader::raw(size_t k) {
  need(k);
  std::vector<uint8_t> v(p + pos, p + pos + k);
  pos += k;
  return v;
}

std::string ByteReader::text(size_t k) {
  need(k);
  std::string s(reinterpret_cast<const char*>(p + pos), k);
  pos += k;
  return s;
}

// ------------------------------------------------------------- PPM / PGM ----

namespace {

// Reads one whitespace/comment-separated token from a PNM header.
std::string pnm_token(ByteReader& r) {
  std::string tok;
  for (;;) {
    r.need(1);
    char c = static_cast<char>(r.u8());
    if (c == '#') {
      while (r.remaining() > 0 && static_cast<char>(r.u8()) != '\n') {
      }
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
}

int pnm_int(ByteReader& r, const std::string& what) {
  const std::string tok = pnm_token(r);
  try {
    size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("bad PNM " + what + ": '" + tok + "'");
  }
}

Tensor read_pnm(const std::string& path, const std::string& magic, int channels) {
  const std::vector<uint8_t> bytes = read_file(path);
  ByteReader r(bytes);
  if (pnm_token(r) != magic) {
    throw std::runtime_error(path + ": not a binary " + magic + " file");
  }
  const int w = pnm_int(r, "width");
  const int h = pnm_int(r, "height");
  const int maxval = pnm_int(r, "maxval");
  if (maxval != 255) {
    throw std::runtime_error(path + ": unsupported maxval " + std::to_string(maxval));
  }
  // The single whitespace byte after maxval was consumed by pnm_int.
  const size_t need = static_cast<size_t>(w) * h * channels;
  if (r.remaining() < need) {
    throw std::runtime_error(path + ": pixel data truncated");
  }
  Tensor out = Tensor::zeros({channels, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < channels; ++c) {
      out[c * plane + i] = static_cast<double>(r.u8()) / 255.0;
    }
  }
  return out;
}

void write_pnm(const std::string& path, const std::string& magic, const Tensor& img,
               int channels) {
  if (img.rank() != 3 || img.shape[0] != channels) {
    throw std::invalid_argument(path + ": expected (" + std::to_string(channels) +
                                ",H,W) image, got " + img.shape_str());
  }
  const int h = img.shape[1], w = img.shape[2];
  ByteWriter bw;
  bw.text(magic + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n");
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < channels; ++c) {
      const double v = std::min(1.0, std::max(0.0, img[c * plane + i]));
      bw.u8(static_cast<uint8_t>(std::lround(v * 255.0)));
    }
  }
  write_file(path, bw.bytes);
}

}  // namespace

Tensor read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }
void write_ppm(const std::string& path, const Tensor& rgb) {
  write_pnm(path, "P6", rgb, 3);
}
Tensor read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }
void write_pgm(const std::string& path, const Tensor& gray) {
  write_pnm(path, "P5", gray, 1);
}

// ------------------------------------------------------------ weight file ----

std::vector<uint8_t> serialize_weights(
    const std::vector<std::pair<std::string, Tensor>>& entries) {
  ByteWriter bw;
  bw.text("ELFW");
  bw.u8(1);
  bw.u32(static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("tensor name too long");
    bw.u16(static_cast<uint16_t>(name.size()));
    bw.text(name);
    bw.u8(static_cast<uint8_t>(t.rank()));
    for (int d : t.shape) bw.u32(static_cast<uint32_t>(d));
    for (double v : t.data) bw.f32(static_cast<float>(v));
  }
  return bw.bytes;
}

std::vector<std::pair<std::string, Tensor>> parse_weights(
    const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.text(4) != "ELFW") throw std::runtime_error("not a weight file (bad magic)");
  const uint8_t version = r.u8();
  if (version != 1) {
    throw std::runtime_error("unsupported weight file version " + std::to_string(version));
  }
  const uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text(r.u16());
    const int rank = r.u8();
    std::vector<int> shape(static_cast<size_t>(rank));
    for (int& d : shape) {
      const uint32_t v = r.u32();
      if (v == 0 || v > 0x7FFFFFFFu) throw std::runtime_error("bad tensor dim");
      d = static_cast<int>(v);
    }
    const int64_t numel = checked_numel(shape);
    Tensor t = Tensor::zeros(shape);
    for (int64_t j = 0; j < numel; ++j) t[j] = static_cast<double>(r.f32());
    out.emplace_back(name, std::move(t));
  }
  return out;
}

void save_weights_file(const std::string& path,
                       const std::vector<std::pair<std::string, Tensor>>& entries) {
  write_file(path, serialize_weights(entries));
}

std::vector<std::pair<std::string, Tensor>> load_weights_file(const std::string& path) {
  return parse_weights(read_file(path));
}

std::vector<std::pair<std::string, Tensor>> snapshot_model(CodecModel& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, var] : model.params().items()) {
    out.emplace_back(name, var->value);
  }
  for (const auto& entry : model.stats_entries()) {
    out.emplace_back(entry.name + ".mean", entry.stats->mean);
    out.emplace_back(entry.name + ".var", entry.stats->var);
    out.emplace_back(entry.name + ".count",
                     Tensor::from({1}, {static_cast<double>(entry.stats->step_count)}));
  }
  return out;
}

void restore_model(CodecModel& model,
                   const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::map<std::string, const Tensor*> got;
  for (const auto& [name, t] : entries) {
    if (!got.emplace(name, &t).second) {
      throw std::runtime_error("duplicate tensor '" + name + "' in weights");
    }
  }
  auto take = [&](const std::string& name, const std::vector<int>& shape) -> const Tensor& {
    auto it = got.find(name);
    if (it == got.end()) throw std::runtime_error("weights missing tensor '" + name + "'");
    if (it->second->shape != shape) {
      throw std::runtime_error("weights tensor '" + name + "' has shape " +
                               it->second->shape_str() + ", model expects " +
                               Tensor::zeros(shape).shape_str());
    }
    const Tensor& t = *it->second;
    got.erase(it);
    return t;
  };
  for (const auto& [name, var] : model.params().items()) {
    var->value = take(name, var->value.shape);
  }
  for (const auto& entry : model.stats_entries()) {
    ChannelStats& st = *entry.stats;
    st.mean = take(entry.name + ".mean", st.mean.shape);
    st.var = take(entry.name + ".var", st.var.shape);
    const Tensor& cnt = take(entry.name + ".count", {1});
    st.step_count = std::llround(cnt[0]);
    st.frozen = st.step_count >= st.freeze_after;
  }
  if (!got.empty()) {
    throw std::runtime_error("weights contain unknown tensor '" + got.begin()->first + "'");
  }
}

uint64_t model_hash(CodecModel& model) {
  const std::vector<uint8_t> bytes = serialize_weights(snapshot_model(model));
  return fnv1a64(bytes.data(), bytes.size());
}

void save_model(const std::string& path, CodecModel& model) {
  save_weights_file(path, snapshot_model(model));
}

void load_model(const std::string& path, CodecModel& model) {
  restore_model(model, load_weights_file(path));
}

// ----------------------------------------------------------------- config ----

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

std::string Config::get_str(const std::string& key, const std::string& dflt) const {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : it->second;
}

int64_t Config::get_int(const std::string& key, int64_t dflt) const {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  try {
    size_t used = 0;
    const int64_t v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': bad integer '" + it->second + "'");
  }
}

double Config::get_double(const std::string& key, double dflt) const {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  try {
    size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': bad number '" + it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool dflt) const {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  const std::string v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("config key '" + key + "': bad boolean '" + v + "'");
}

Config parse_config(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    }
    cfg.kv[key] = value;
  }
  return cfg;
}

Config read_config_file(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

// ------------------------------------------------------------- file utils ----

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("I/O error reading '" + path + "'");
  return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("I/O error writing '" + path + "'");
}

std::vector<std::string> list_files(const std::string& dir, const std::string& ext) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw std::runtime_error("'" + dir + "' is not a directory");
  }
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) {
      out.push_back(e.path().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace elfvc
