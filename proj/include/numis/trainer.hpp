#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "numis/checkpoint.hpp"
#include "numis/cnn.hpp"
#include "numis/dataset.hpp"
#include "numis/image.hpp"
#include "numis/layers.hpp"
#include "numis/vit.hpp"

namespace numis {

// ---- losses -------------------------------------------------------------------

struct BceLossSpec {
  std::vector<double> positive_weights;  // empty means 1 for every label
  double epsilon = 1e-7;

  void validate(std::size_t num_labels) const;
  double weight(std::size_t label) const { return positive_weights.empty() ? 1.0 : positive_weights.at(label); }
};

// Mean over labels of -[w y log(p) + (1 - y) log(1 - p)], p clamped to [eps, 1 - eps].
// Note the leading minus: the loss is nonnegative and vanishes at p == y.
Tensor bce_loss(const Tensor& probabilities, std::span<const std::uint8_t> labels, const BceLossSpec& spec);

// Same loss evaluated on logits without clamping: w y softplus(-z) + (1 - y) softplus(z).
// Used for training, where a saturated f32 sigmoid would otherwise hit the clamp and stop learning.
Tensor bce_with_logits(const Tensor& logits, std::span<const std::uint8_t> labels, const BceLossSpec& spec);

// -log softmax(logits)[target]
Tensor cross_entropy(const Tensor& logits, std::size_t target);

// ---- optimisation -------------------------------------------------------------

// v <- momentum * v + g; w <- w - lr * v. Parameters not requiring grad are skipped
// and never get a velocity buffer.
class SgdMomentum {
 public:
  explicit SgdMomentum(double learning_rate, double momentum = 0.9);

  void step(const ParameterList& params);
  double learning_rate() const { return learning_rate_; }
  double momentum() const { return momentum_; }
  const std::map<std::string, std::vector<float>>& velocities() const { return velocity_; }

 private:
  double learning_rate_;
  double momentum_;
  std::map<std::string, std::vector<float>> velocity_;
};

void zero_grads(const ParameterList& params);

// Stops once `patience` consecutive epochs bring no strictly lower validation loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience = 30);

  // Returns true when training should stop after this epoch.
  bool update(double validation_loss);
  std::size_t epochs_seen() const { return epochs_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_;
};

// ---- metrics ------------------------------------------------------------------

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  void add(bool predicted, bool actual);
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Metrics with a zero denominator are absent rather than 0.
struct ConceptMetrics {
  std::string concept_name;
  ConfusionMatrix confusion;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

ConceptMetrics compute_metrics(std::string concept_name, const ConfusionMatrix& confusion);

struct Evaluation {
  double loss = 0.0;
  std::vector<ConceptMetrics> concepts;

  double mean_accuracy() const;
  nlohmann::json to_json() const;
};

// ---- data ---------------------------------------------------------------------

struct Sample {
  std::string id;
  Tensor image;  // [size, size], values in [0, 1]
  std::vector<std::uint8_t> labels;
};

struct ImageSet {
  std::vector<std::string> concepts;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

using ImageLoader = std::function<GrayImage(const std::string& id)>;

// Loads each distinct id once and resizes to size x size when needed.
ImageSet build_image_set(const DatasetView& view, const ImageLoader& load, std::size_t size);
// Loader reading <dir>/<id><suffix>.
ImageLoader directory_loader(std::filesystem::path dir, std::string suffix = ".png");

// ---- evaluation ---------------------------------------------------------------

// ViT: a label is predicted positive when sigmoid(logit) >= threshold.
Evaluation evaluate_vit(const ViTModel& model, const ImageSet& set, const BceLossSpec& loss,
                        double threshold = 0.5);
// CNN on one concept of `set`: argmax of the two logits, class 1 = positive.
Evaluation evaluate_cnn(const CnnModel& model, const ImageSet& set, std::size_t concept_index);

// ---- training -----------------------------------------------------------------

struct TrainSchedule {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::optional<std::size_t> patience;  // early stopping on validation loss
  std::uint64_t seed = 0;
  double threshold = 0.5;
  bool evaluate_training_set = false;
  // Stop as soon as training-set mean accuracy reaches this (needs evaluate_training_set).
  std::optional<double> target_train_accuracy;
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch-NNNN.ckpt per epoch
  std::optional<std::filesystem::path> log_path;        // per-epoch CSV statistics

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainSchedule& s);
void from_json(const nlohmann::json& j, TrainSchedule& s);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's batches
  std::optional<Evaluation> train;
  Evaluation validation;
};

struct TrainResult {
  std::vector<ModelCheckpoint> checkpoints;  // one per completed epoch
  std::size_t best_index = 0;                // lowest validation loss
  std::vector<EpochRecord> history;
  bool stopped_early = false;
};

inline constexpr std::string_view training_log_header = "epoch,split,loss,concept,acc,prec,rec,f1,tp,fp,tn,fn";
std::string training_log_rows(std::size_t epoch, std::string_view split, const Evaluation& evaluation);

TrainResult train_vit(ViTModel& model, const ImageSet& train, const ImageSet& val, const BceLossSpec& loss,
                      const TrainSchedule& schedule);
TrainResult train_cnn(CnnModel& model, const ImageSet& train, const ImageSet& val, std::size_t concept_index,
                      const TrainSchedule& schedule);

}  // namespace numis
