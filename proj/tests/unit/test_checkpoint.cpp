#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "../reference.hpp"
#include "numis/checkpoint.hpp"

using namespace numis;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "numis-ckpt";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<Tensor> fixed_batch(std::size_t n) {
  std::mt19937_64 rng(21);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(reference::random_tensor({32, 32}, rng, 0.0, 1.0, 0.0, false));
  return out;
}

std::vector<float> logits(const auto& model, const std::vector<Tensor>& batch) {
  std::vector<float> out;
  for (const auto& img : batch) {
    const Tensor l = model.forward(img);
    out.insert(out.end(), l.data().begin(), l.data().end());
  }
  return out;
}

}  // namespace

TEST(Checkpoint, VitSaveLoadSaveIsByteIdentical) {
  ViTConfig c;
  c.num_labels = 3;
  ViTModel model(c, 4);
  model.freeze_backbone();
  const auto a = scratch_file("vit-a.ckpt"), b = scratch_file("vit-b.ckpt");
  save_checkpoint(a, capture(model, 7, {{"val_loss", 0.25}}));
  const ModelCheckpoint loaded = load_checkpoint(a);
  EXPECT_EQ(loaded.epoch, 7U);
  EXPECT_EQ(loaded.metadata.at("model"), "vit");
  EXPECT_EQ(loaded.metadata.at("stats").at("val_loss"), 0.25);
  save_checkpoint(b, loaded);
  EXPECT_EQ(read_bytes(a), read_bytes(b));

  const ViTModel restored = vit_from_checkpoint(loaded);
  EXPECT_TRUE(restored.backbone_frozen());
  const auto batch = fixed_batch(4);
  EXPECT_EQ(logits(model, batch), logits(restored, batch));
}

TEST(Checkpoint, CnnRoundTripKeepsLogits) {
  CnnConfig c = CnnConfig::tiny();
  c.conv_blocks[2].pool = 1;
  const CnnModel model(c, 5);
  const std::string bytes = serialize_checkpoint(capture(model, 2, nlohmann::json::object()));
  const ModelCheckpoint parsed = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(parsed), bytes);
  const CnnModel restored = cnn_from_checkpoint(parsed);
  EXPECT_EQ(restored.config().conv_blocks[2].pool, 1U);
  const auto batch = fixed_batch(3);
  EXPECT_EQ(logits(model, batch), logits(restored, batch));
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const ViTModel model(ViTConfig{}, 1);
  const std::string bytes = serialize_checkpoint(capture(model, 1, {}));
  for (std::size_t cut : {std::size_t{0}, std::size_t{4}, std::size_t{8}, std::size_t{13}, std::size_t{40},
                          bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(parse_checkpoint(std::string_view(bytes).substr(0, cut)), CheckpointError) << cut;
  }
  const auto path = scratch_file("truncated.ckpt");
  std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, VersionMagicAndTrailingBytesAreChecked) {
  const CnnModel model(CnnConfig::tiny(), 1);
  std::string bytes = serialize_checkpoint(capture(model, 1, {}));
  std::string wrong_version = bytes;
  wrong_version[8] = char(checkpoint_version + 1);
  EXPECT_THROW(parse_checkpoint(wrong_version), CheckpointError);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(wrong_magic), CheckpointError);
  EXPECT_THROW(parse_checkpoint(bytes + "x"), CheckpointError);
}

TEST(Checkpoint, LayoutIsLittleEndianWithLengthPrefixes) {
  ModelCheckpoint ckpt;
  ckpt.epoch = 3;
  ckpt.arrays.push_back({"w", {2}, {1.0F, -2.0F}});
  const std::string bytes = serialize_checkpoint(ckpt);
  EXPECT_EQ(bytes.substr(0, 8), "NUMISCKP");
  EXPECT_EQ(bytes[8], char(checkpoint_version));
  EXPECT_EQ(bytes.substr(9, 3), std::string(3, '\0'));
  const ModelCheckpoint back = parse_checkpoint(bytes);
  EXPECT_EQ(back.arrays, ckpt.arrays);
  EXPECT_EQ(back.epoch, 3U);
}

TEST(Checkpoint, RestoreRequiresEveryParameter) {
  const CnnModel model(CnnConfig::tiny(), 1);
  ModelCheckpoint ckpt = capture(model, 1, {});
  ckpt.arrays.pop_back();
  const CnnModel other(CnnConfig::tiny(), 2);
  EXPECT_THROW(restore_parameters(ckpt, other.parameters()), CheckpointError);
}

TEST(Checkpoint, MissingFileIsADataError) {
  EXPECT_THROW(load_checkpoint(scratch_file("absent.ckpt")), DataError);
}
