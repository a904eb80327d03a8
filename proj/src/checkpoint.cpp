#include "numis/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace numis {

namespace {

constexpr std::string_view magic = "NUMISCKP";

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  T get_le(const char* what) {
    const auto raw = take(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return value;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::vector<NamedArray> snapshot(const ParameterList& params) {
  std::vector<NamedArray> arrays;
  for (const auto& p : params) {
    const auto d = p.tensor.data();
    arrays.push_back({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return arrays;
}

}  // namespace

std::string serialize_checkpoint(const ModelCheckpoint& checkpoint) {
  nlohmann::json meta = checkpoint.metadata;
  meta["epoch"] = checkpoint.epoch;
  const std::string meta_text = meta.dump();

  std::string out(magic);
  put_le<std::uint32_t>(out, checkpoint_version);
  put_le<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const auto& a : checkpoint.arrays) {
    if (shape_numel(a.shape) != a.values.size()) {
      throw ShapeError("array '" + a.name + "' has " + std::to_string(a.values.size()) +
                       " values for shape " + shape_string(a.shape));
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_le<std::uint64_t>(out, d);
    for (float v : a.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ModelCheckpoint parse_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(magic.size(), "magic") != magic) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = in.get_le<std::uint32_t>("version");
  if (version != checkpoint_version) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(checkpoint_version) + ")");
  }
  const auto meta_len = in.get_le<std::uint64_t>("metadata length");
  ModelCheckpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(in.take(meta_len, "metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is malformed: ") + e.what());
  }
  ckpt.epoch = ckpt.metadata.value("epoch", std::size_t{0});
  ckpt.metadata.erase("epoch");

  const auto count = in.get_le<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = in.get_le<std::uint32_t>("array name length");
    a.name = std::string(in.take(name_len, "array name"));
    const auto rank = in.get_le<std::uint32_t>("array rank");
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(in.get_le<std::uint64_t>("array dims"));
    const auto n = shape_numel(a.shape);
    if (n > bytes.size()) throw CheckpointError("checkpoint truncated inside '" + a.name + "'");
    a.values.resize(n);
    for (auto& v : a.values) v = std::bit_cast<float>(in.get_le<std::uint32_t>("array values"));
    ckpt.arrays.push_back(std::move(a));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after the last checkpoint array");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  // Write then rename so a crash never leaves a half-written checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

ModelCheckpoint capture(const ViTModel& model, std::size_t epoch, nlohmann::json stats) {
  ModelCheckpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.metadata = {{"model", "vit"},
                   {"config", model.config()},
                   {"backbone_frozen", model.backbone_frozen()},
                   {"stats", std::move(stats)}};
  ckpt.arrays = snapshot(model.parameters());
  return ckpt;
}

ModelCheckpoint capture(const CnnModel& model, std::size_t epoch, nlohmann::json stats) {
  ModelCheckpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.metadata = {{"model", "cnn"}, {"config", model.config()}, {"stats", std::move(stats)}};
  ckpt.arrays = snapshot(model.parameters());
  return ckpt;
}

void restore_parameters(const ModelCheckpoint& checkpoint, const ParameterList& params) {
  std::map<std::string_view, const NamedArray*> by_name;
  for (const auto& a : checkpoint.arrays) by_name.emplace(a.name, &a);
  for (const auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw CheckpointError("checkpoint parameter '" + p.name + "' has shape " + shape_string(it->second->shape) +
                            ", model expects " + shape_string(p.tensor.shape()));
    }
  }
  for (const auto& p : params) {
    const auto& src = by_name.at(p.name)->values;
    auto dst = Tensor(p.tensor).mutable_data();
    std::memcpy(dst.data(), src.data(), src.size() * sizeof(float));
  }
}

ViTModel vit_from_checkpoint(const ModelCheckpoint& checkpoint) {
  if (checkpoint.metadata.value("model", "") != "vit") throw CheckpointError("checkpoint does not hold a ViT");
  ViTModel model(checkpoint.metadata.at("config").get<ViTConfig>(), 0);
  restore_parameters(checkpoint, model.parameters());
  if (checkpoint.metadata.value("backbone_frozen", false)) model.freeze_backbone();
  return model;
}

CnnModel cnn_from_checkpoint(const ModelCheckpoint& checkpoint) {
  if (checkpoint.metadata.value("model", "") != "cnn") throw CheckpointError("checkpoint does not hold a CNN");
  CnnModel model(checkpoint.metadata.at("config").get<CnnConfig>(), 0);
  restore_parameters(checkpoint, model.parameters());
  return model;
}

}  // namespace numis
