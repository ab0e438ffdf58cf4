#pragma once

// Binary checkpoint: all trained parameters plus the configuration that
// produced them.
//
// Layout (little-endian):
//   "PINCERCK" | u32 version | u32 stage | u64 n | config JSON (n bytes)
//   | u64 arrays | per array: u32 name length, name, u64 rows, u64 cols, f64 values
//   | u64 FNV-1a-64 of every preceding byte

#include <filesystem>
#include <string>

#include "pincer/archive.hpp"
#include "pincer/config.hpp"
#include "pincer/pipeline.hpp"

namespace pincer {

inline constexpr char kCheckpointMagic[8] = {'P', 'I', 'N', 'C', 'E', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Checkpoint {
  RunConfig config;
  PincerModel model;

  int stage() const { return model.stage(); }
};

/// Config snapshot stored in a checkpoint. Paths are left out so the same
/// run in two directories produces identical bytes.
inline nlohmann::ordered_json config_snapshot(const RunConfig& config) {
  auto j = to_json(config);
  j.erase("data_dir");
  j.erase("output_dir");
  return j;
}

inline std::vector<std::pair<std::string, Tensor>> checkpoint_arrays(const PincerModel& model) {
  auto arrays = model.stage1.encoder.named_parameters();
  arrays.emplace_back("codebook", model.stage1.codebook.tensor());
  if (model.decoder) {
    for (auto& named : model.decoder->named_parameters()) arrays.push_back(std::move(named));
  }
  return arrays;
}

inline std::string serialize_checkpoint(const RunConfig& config, const PincerModel& model) {
  if (model.width() != 2 * config.d) throw ContractError("checkpoint: model width does not match config d");
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(model.stage()));
  const auto json = config_snapshot(config).dump();
  io::put_u64(out, json.size());
  out += json;
  const auto arrays = checkpoint_arrays(model);
  io::put_u64(out, arrays.size());
  for (const auto& [name, t] : arrays) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    io::put_u64(out, t.rows());
    io::put_u64(out, t.cols());
    for (double v : t.values()) io::put_f64(out, v);
  }
  io::put_u64(out, fnv1a64(out));
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const PincerModel& model) {
  io::write_file(path, serialize_checkpoint(config, model));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& what) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 8 + 8 ||
      bytes.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError(what + ": not a checkpoint");
  }
  io::Reader head(std::span<const char>(bytes).subspan(sizeof(kCheckpointMagic)), what);
  const auto version = head.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto body = std::string_view(bytes).substr(0, bytes.size() - 8);
  io::Reader tail(std::span<const char>(bytes).subspan(bytes.size() - 8), what);
  if (tail.u64() != fnv1a64(body)) throw FormatError(what + ": checksum mismatch");

  io::Reader r(std::span<const char>(body).subspan(sizeof(kCheckpointMagic) + 4), what);
  const auto stage = r.u32();
  if (stage != 1 && stage != 2) throw FormatError(what + ": invalid stage " + std::to_string(stage));
  const auto json_size = r.u64();
  if (json_size > r.remaining()) throw FormatError(what + ": truncated payload");
  Checkpoint ck;
  try {
    ck.config = config_from_json(nlohmann::json::parse(r.bytes(json_size)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": config snapshot is not valid JSON: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(what + ": config snapshot rejected: " + e.what());
  }
  ck.model.stage1 = init_stage1(ck.config.stage1());
  if (stage == 2) ck.model.decoder = DecoderParams::init(ck.config.stage2().decoder, 2 * ck.config.d, 0);

  auto expected = checkpoint_arrays(ck.model);
  const auto count = r.u64();
  if (count != expected.size()) {
    throw FormatError(what + ": " + std::to_string(count) + " arrays, expected " + std::to_string(expected.size()));
  }
  for (auto& [name, t] : expected) {
    const auto len = r.u32();
    const auto got = r.bytes(len);
    if (got != name) throw FormatError(what + ": expected array '" + name + "', found '" + got + "'");
    const auto rows = r.u64();
    const auto cols = r.u64();
    if (rows != t.rows() || cols != t.cols()) {
      throw FormatError(what + ": array '" + name + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()));
    }
    // Tensors share storage, so writing through the copy fills the model.
    for (auto& v : t.values_mut()) v = r.f64();
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after arrays");
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(io::read_file(path), path.string());
}

/// Stage 2 starts from a Stage-1 checkpoint only.
inline void require_stage1(const Checkpoint& ck) {
  if (ck.stage() != 1) {
    throw StateError("stage-2 training needs a stage-1 checkpoint; this checkpoint is already stage " +
                     std::to_string(ck.stage()));
  }
}

}  // namespace pincer
