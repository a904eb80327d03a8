#pragma once

// Pipeline stages over one JSON config. Every stage writes its artifacts under
// output_root and a summary to output_root/stages/<stage>.json carrying a hash
// of its inputs; re-running with the same inputs is a no-op unless forced.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "numis/cnn.hpp"
#include "numis/dataset.hpp"
#include "numis/saliency.hpp"
#include "numis/segmenter.hpp"
#include "numis/trainer.hpp"
#include "numis/vit.hpp"

namespace numis {

struct PipelineConfig {
  std::filesystem::path corpus_dir;
  std::filesystem::path output_root;
  std::filesystem::path lexicon_path;
  std::optional<std::filesystem::path> stop_words_path;
  std::uint64_t seed = 0;

  SegmentationParams segmentation;
  SplitSpec split;
  ViTConfig vit;
  CnnConfig cnn;

  std::size_t pretrain_images = 400;
  TrainSchedule pretrain_schedule;
  TrainSchedule vit_schedule;
  TrainSchedule cnn_schedule;
  BalanceMode cnn_balance = BalanceMode::Undersample;
  std::size_t oversample_factor = 0;

  HipeConfig saliency;
  std::size_t saliency_images = 3;
  double overlay_alpha = 0.6;
  std::size_t mine_top = 50;

  // Relative paths resolve against the config file's directory. "seed" is mandatory
  // unless `seed_override` is given.
  static PipelineConfig load(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                  std::optional<std::uint64_t> seed_override = {});
  nlohmann::json to_json() const;
  void validate() const;
};

const std::vector<std::string>& stage_names();

enum class StageStatus { Ran, UpToDate };

StageStatus run_stage(const std::string& stage, const PipelineConfig& config, bool force = false);
// Every stage in order.
void run_pipeline(const PipelineConfig& config, bool force = false);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

// Writes corpus/, lexicons.json, stopwords.txt and config.json for a small synthetic project.
void write_demo_project(const std::filesystem::path& dir, std::size_t images, std::uint64_t seed);

}  // namespace numis
