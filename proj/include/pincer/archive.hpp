#pragma once

// Embedding archive: a text manifest of key=value lines plus a flat
// little-endian float32 payload (row-major, one vector per row) stored next
// to it as "<manifest>.bin".

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pincer/errors.hpp"

namespace pincer {

enum class Space { kQueryText, kQueryImage, kProductText, kProductImage, kConcatenated };

inline const char* to_string(Space space) {
  switch (space) {
    case Space::kQueryText: return "query-text-half";
    case Space::kQueryImage: return "query-image-half";
    case Space::kProductText: return "product-text-half";
    case Space::kProductImage: return "product-image-half";
    case Space::kConcatenated: return "concatenated";
  }
  return "unknown";
}

inline Space parse_space(const std::string& tag) {
  for (Space s : {Space::kQueryText, Space::kQueryImage, Space::kProductText, Space::kProductImage,
                  Space::kConcatenated}) {
    if (tag == to_string(s)) return s;
  }
  throw FormatError("unknown space tag '" + tag + "'");
}

/// Vector length of a space for model dimension d.
inline std::size_t space_dim(Space space, std::size_t d) { return space == Space::kConcatenated ? 2 * d : d; }

// ------------------------------------------------------------ little-endian io

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const char> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(what_ + ": truncated payload");
  }
  std::span<const char> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

/// Parses "key=value" lines. Blank lines and '#' comments are skipped;
/// `entries` keeps every line in file order, including repeated keys.
struct Manifest {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string& get(const std::string& key, const std::string& file) const {
    auto it = values.find(key);
    if (it == values.end()) throw FormatError(file + ": manifest missing key '" + key + "'");
    return it->second;
  }
  std::uint64_t get_u64(const std::string& key, const std::string& file) const {
    const auto& raw = get(key, file);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      return v;
    } catch (const std::exception&) {
      throw FormatError(file + ": manifest key '" + key + "' is not an unsigned integer: '" + raw + "'");
    }
  }
};

inline Manifest parse_manifest(const std::string& text, const std::string& file) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError(file + ": malformed manifest line '" + line + "'");
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    m.values[key] = value;
    m.entries.emplace_back(std::move(key), std::move(value));
  }
  return m;
}

inline std::filesystem::path payload_path(const std::filesystem::path& manifest) {
  return manifest.string() + ".bin";
}

}  // namespace io

// ------------------------------------------------------------ embedding archive

inline constexpr std::uint32_t kArchiveVersion = 1;

struct EmbeddingArchive {
  std::size_t d = 0;  // model dimension; vectors have space_dim(space, d) entries
  Space space = Space::kConcatenated;
  std::size_t count = 0;
  std::vector<float> data;  // count x dim

  std::size_t dim() const { return space_dim(space, d); }
  std::span<const float> row(std::size_t i) const { return std::span<const float>(data).subspan(i * dim(), dim()); }
};

inline void write_archive(const std::filesystem::path& manifest_path, const EmbeddingArchive& archive) {
  if (archive.data.size() != archive.count * archive.dim()) {
    throw ContractError("write_archive: payload size does not match count x dim");
  }
  std::ostringstream manifest;
  manifest << "version=" << kArchiveVersion << "\n"
           << "d=" << archive.d << "\n"
           << "count=" << archive.count << "\n"
           << "space=" << to_string(archive.space) << "\n"
           << "payload=" << io::payload_path(manifest_path).filename().string() << "\n";
  std::string payload;
  payload.reserve(archive.data.size() * 4);
  for (float v : archive.data) io::put_f32(payload, v);
  io::write_file(manifest_path, manifest.str());
  io::write_file(io::payload_path(manifest_path), payload);
}

inline EmbeddingArchive read_archive(const std::filesystem::path& manifest_path) {
  const std::string name = manifest_path.string();
  const auto manifest = io::parse_manifest(io::read_file(manifest_path), name);
  const auto version = manifest.get_u64("version", name);
  if (version != kArchiveVersion) {
    throw FormatError(name + ": archive version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kArchiveVersion) + ")");
  }
  EmbeddingArchive archive;
  archive.d = manifest.get_u64("d", name);
  archive.count = manifest.get_u64("count", name);
  archive.space = parse_space(manifest.get("space", name));
  if (archive.d == 0) throw FormatError(name + ": d must be positive");
  const auto payload_file = manifest_path.parent_path() / manifest.get("payload", name);
  const auto bytes = io::read_file(payload_file);
  const std::size_t expected = archive.count * archive.dim() * 4;
  if (bytes.size() != expected) {
    throw FormatError(name + ": payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected) + (bytes.size() < expected ? " (truncated)" : ""));
  }
  io::Reader reader(bytes, name);
  archive.data.resize(archive.count * archive.dim());
  for (auto& v : archive.data) v = reader.f32();
  return archive;
}

}  // namespace pincer
