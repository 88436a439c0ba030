#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unite/model.hpp"

namespace unite {

inline constexpr char kCheckpointMagic[8] = {'U', 'N', 'I', 'T', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Raw checkpoint contents.
///
/// Layout (little-endian): magic "UNITECKP", u32 version, u32 byte length +
/// UTF-8 JSON model config, u32 record count, then per record: u32 name length,
/// name bytes, u32 rank, rank x u64 extents, f64 values.
struct CheckpointFile {
  ModelConfig config;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
  const CheckpointRecord& at(const std::string& name) const;
};

std::string model_config_json(const ModelConfig& config);
ModelConfig parse_model_config_json(const std::string& text);

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

/// Model parameters only; any extra records are ignored.
UniteModel load_model(const std::filesystem::path& path);

}  // namespace unite
