#pragma once

// Binary layout, little-endian throughout:
//   "NUMISCKP" | u32 version | u64 n + n bytes of JSON metadata |
//   u32 array count | per array: u32 name length, name, u32 rank, u64 dims[rank], f32 values

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "numis/cnn.hpp"
#include "numis/errors.hpp"
#include "numis/layers.hpp"
#include "numis/vit.hpp"

namespace numis {

inline constexpr std::uint32_t checkpoint_version = 1;

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct ModelCheckpoint {
  std::size_t epoch = 0;
  // "model" ("vit" | "cnn"), "config", "stats" and anything else the writer adds.
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> arrays;
};

std::string serialize_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

ModelCheckpoint capture(const ViTModel& model, std::size_t epoch, nlohmann::json stats);
ModelCheckpoint capture(const CnnModel& model, std::size_t epoch, nlohmann::json stats);

// Copies the arrays into `params` by name; every parameter must be present with its shape.
void restore_parameters(const ModelCheckpoint& checkpoint, const ParameterList& params);

ViTModel vit_from_checkpoint(const ModelCheckpoint& checkpoint);
CnnModel cnn_from_checkpoint(const ModelCheckpoint& checkpoint);

}  // namespace numis
