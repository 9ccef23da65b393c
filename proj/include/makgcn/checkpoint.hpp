#pragma once

// Checkpoint container:
//   "MAKCKPT1"
//   u64 manifest length, manifest JSON (UTF-8)
//   u64 blob count
//   per blob: u32 name length, name, u8 dtype tag, u32 rank, u64 extents[rank],
//             u64 payload bytes, payload (little-endian)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "makgcn/data.hpp"
#include "makgcn/model.hpp"
#include "makgcn/training.hpp"

namespace makgcn {

using Json = nlohmann::json;

inline constexpr int kCheckpointFormatVersion = 1;

Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const PipelineConfig& c);
Json to_json(const Metrics& m);
// Missing keys keep their defaults; bad values throw ConfigError.
ModelConfig model_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
PipelineConfig pipeline_config_from_json(const Json& j);
DType parse_dtype(const std::string& text);

struct CheckpointBlob {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<unsigned char> payload;
};

struct CheckpointFile {
  Json manifest;
  std::vector<CheckpointBlob> blobs;
};

// Adds format_version, dtype and the model config to `manifest`, then writes
// parameters and buffers in state() order. Writes through a temporary file so
// an interrupted save leaves the previous checkpoint intact.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, Model<T>& model, Json manifest);

// DataError when the file is missing or corrupt.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Audits every name, dtype and shape before copying anything; throws
// CheckpointMismatch on the first discrepancy.
template <typename T>
void load_state(Model<T>& model, const CheckpointFile& file);

}  // namespace makgcn
