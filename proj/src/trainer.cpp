#include "numis/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "numis/errors.hpp"
#include "numis/random.hpp"

namespace numis {

using autograd::Node;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_labels(const Tensor& t, std::span<const std::uint8_t> labels, const BceLossSpec& spec, const char* what) {
  if (t.numel() != labels.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(t.numel()) + " outputs for " +
                     std::to_string(labels.size()) + " labels");
  }
  spec.validate(labels.size());
}

}  // namespace

// ---- losses ---------------------------------------------------------------------

void BceLossSpec::validate(std::size_t num_labels) const {
  if (!(epsilon > 0.0 && epsilon <= 0.01)) throw ConfigError("BCE clamp epsilon must lie in (0, 0.01]");
  if (!positive_weights.empty() && positive_weights.size() != num_labels) {
    throw ShapeError("BCE has " + std::to_string(positive_weights.size()) + " weights for " +
                     std::to_string(num_labels) + " labels");
  }
  for (double w : positive_weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("BCE positive weights must be positive");
}

Tensor bce_loss(const Tensor& probabilities, std::span<const std::uint8_t> labels, const BceLossSpec& spec) {
  check_labels(probabilities, labels, spec, "bce_loss");
  const auto p = probabilities.data();
  const std::size_t n = labels.size();
  const double lo = spec.epsilon;
  const double hi = 1.0 - spec.epsilon;
  double total = 0.0;
  std::vector<float> dloss(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double x = std::clamp(double(p[c]), lo, hi);
    const double w = spec.weight(c);
    const double y = labels[c];
    total -= w * y * std::log(x) + (1.0 - y) * std::log(1.0 - x);
    const bool clamped = p[c] < lo || p[c] > hi;
    dloss[c] = clamped ? 0.0F : static_cast<float>((-w * y / x + (1.0 - y) / (1.0 - x)) / double(n));
  }
  return autograd::make_result("bce", {1}, {static_cast<float>(total / double(n))}, {probabilities},
                               [dloss = std::move(dloss)](Node& self) {
                                 Node& parent = *self.parents[0];
                                 if (!parent.requires_grad) return;
                                 auto& g = parent.grad_buffer();
                                 for (std::size_t c = 0; c < g.size(); ++c) g[c] += self.grad[0] * dloss[c];
                               });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const std::uint8_t> labels, const BceLossSpec& spec) {
  check_labels(logits, labels, spec, "bce_with_logits");
  const auto z = logits.data();
  const std::size_t n = labels.size();
  double total = 0.0;
  std::vector<float> dloss(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double w = spec.weight(c);
    const double y = labels[c];
    const double s = stable_sigmoid(z[c]);
    total += w * y * softplus(-double(z[c])) + (1.0 - y) * softplus(z[c]);
    dloss[c] = static_cast<float>((w * y * (s - 1.0) + (1.0 - y) * s) / double(n));
  }
  return autograd::make_result("bce_logits", {1}, {static_cast<float>(total / double(n))}, {logits},
                               [dloss = std::move(dloss)](Node& self) {
                                 Node& parent = *self.parents[0];
                                 if (!parent.requires_grad) return;
                                 auto& g = parent.grad_buffer();
                                 for (std::size_t c = 0; c < g.size(); ++c) g[c] += self.grad[0] * dloss[c];
                               });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  const auto z = logits.data();
  if (target >= z.size()) throw ShapeError("cross_entropy target out of range");
  double top = -std::numeric_limits<double>::infinity();
  for (float v : z) top = std::max(top, double(v));
  double denom = 0.0;
  for (float v : z) denom += std::exp(double(v) - top);
  const double log_norm = top + std::log(denom);
  std::vector<float> dloss(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    dloss[i] = static_cast<float>(std::exp(double(z[i]) - log_norm) - (i == target ? 1.0 : 0.0));
  }
  return autograd::make_result("cross_entropy", {1}, {static_cast<float>(log_norm - z[target])}, {logits},
                               [dloss = std::move(dloss)](Node& self) {
                                 Node& parent = *self.parents[0];
                                 if (!parent.requires_grad) return;
                                 auto& g = parent.grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dloss[i];
                               });
}

// ---- optimisation ---------------------------------------------------------------

SgdMomentum::SgdMomentum(double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

void SgdMomentum::step(const ParameterList& params) {
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    if (!p.tensor.has_grad()) throw NumericError("parameter '" + p.name + "' has no gradient");
    Tensor t = p.tensor;
    const auto g = t.grad();
    auto& v = velocity_[p.name];
    if (v.empty()) v.assign(g.size(), 0.0F);
    if (v.size() != g.size()) throw ShapeError("velocity for '" + p.name + "' changed shape");
    auto w = t.mutable_data();
    const auto mu = static_cast<float>(momentum_);
    const auto lr = static_cast<float>(learning_rate_);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      w[i] -= lr * v[i];
    }
  }
}

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    if (t.requires_grad()) t.zero_grad();
  }
}

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw ConfigError("early-stopping patience must be positive");
}

bool EarlyStopping::update(double validation_loss) {
  ++epochs_;
  if (validation_loss < best_) {
    best_ = validation_loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return false;
  }
  ++since_best_;
  return since_best_ >= patience_;
}

// ---- metrics --------------------------------------------------------------------

void ConfusionMatrix::add(bool predicted, bool actual) {
  if (predicted) {
    ++(actual ? tp : fp);
  } else {
    ++(actual ? fn : tn);
  }
}

ConceptMetrics compute_metrics(std::string concept_name, const ConfusionMatrix& m) {
  ConceptMetrics out{std::move(concept_name), m, {}, {}, {}, {}};
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return double(num) / double(den);
  };
  out.accuracy = ratio(m.tp + m.tn, m.total());
  out.precision = ratio(m.tp, m.tp + m.fp);
  out.recall = ratio(m.tp, m.tp + m.fn);
  if (out.precision && out.recall && *out.precision + *out.recall > 0.0) {
    out.f1 = 2.0 * *out.precision * *out.recall / (*out.precision + *out.recall);
  }
  return out;
}

double Evaluation::mean_accuracy() const {
  if (concepts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : concepts) total += c.accuracy.value_or(0.0);
  return total / double(concepts.size());
}

nlohmann::json Evaluation::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : concepts) {
    list.push_back({{"concept", c.concept_name},
                    {"accuracy", opt(c.accuracy)},
                    {"precision", opt(c.precision)},
                    {"recall", opt(c.recall)},
                    {"f1", opt(c.f1)},
                    {"tp", c.confusion.tp},
                    {"fp", c.confusion.fp},
                    {"tn", c.confusion.tn},
                    {"fn", c.confusion.fn}});
  }
  return {{"loss", loss}, {"concepts", list}};
}

// ---- data -----------------------------------------------------------------------

ImageSet build_image_set(const DatasetView& view, const ImageLoader& load, std::size_t size) {
  ImageSet set;
  set.concepts = view.concepts;
  std::map<std::string, Tensor> cache;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto& id = view.sample_ids[i];
    auto it = cache.find(id);
    if (it == cache.end()) {
      GrayImage image = load(id);
      const int s = static_cast<int>(size);
      if (image.width() != s || image.height() != s) image = resize_bilinear(image, s, s);
      it = cache.emplace(id, to_tensor(image)).first;
    }
    set.samples.push_back({id, it->second, view.labels[i]});
  }
  return set;
}

ImageLoader directory_loader(std::filesystem::path dir, std::string suffix) {
  return [dir = std::move(dir), suffix = std::move(suffix)](const std::string& id) {
    const auto path = dir / (id + suffix);
    if (!std::filesystem::exists(path)) throw DataError("missing image " + path.string());
    return read_gray(path);
  };
}

// ---- evaluation -----------------------------------------------------------------

Evaluation evaluate_vit(const ViTModel& model, const ImageSet& set, const BceLossSpec& loss, double threshold) {
  if (set.size() == 0) throw DataError("cannot evaluate on an empty set");
  std::vector<ConfusionMatrix> matrices(set.concepts.size());
  double total = 0.0;
  for (const auto& s : set.samples) {
    const Tensor logits = model.forward(s.image).detach();
    total += bce_with_logits(logits, s.labels, loss).item();
    const auto z = logits.data();
    for (std::size_t c = 0; c < matrices.size(); ++c) {
      matrices[c].add(stable_sigmoid(z[c]) >= threshold, s.labels[c] != 0);
    }
  }
  Evaluation out;
  out.loss = total / double(set.size());
  for (std::size_t c = 0; c < matrices.size(); ++c) out.concepts.push_back(compute_metrics(set.concepts[c], matrices[c]));
  return out;
}

Evaluation evaluate_cnn(const CnnModel& model, const ImageSet& set, std::size_t concept_index) {
  if (set.size() == 0) throw DataError("cannot evaluate on an empty set");
  if (concept_index >= set.concepts.size()) throw ConfigError("concept index out of range");
  ConfusionMatrix matrix;
  double total = 0.0;
  for (const auto& s : set.samples) {
    const Tensor logits = model.forward(s.image).detach();
    const std::size_t target = s.labels[concept_index] ? 1 : 0;
    total += cross_entropy(logits, target).item();
    const auto z = logits.data();
    matrix.add(z[1] > z[0], target == 1);
  }
  Evaluation out;
  out.loss = total / double(set.size());
  out.concepts.push_back(compute_metrics(set.concepts[concept_index], matrix));
  return out;
}

// ---- training -------------------------------------------------------------------

void TrainSchedule::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience && *patience == 0) throw ConfigError("patience must be positive");
  if (target_train_accuracy && !evaluate_training_set) {
    throw ConfigError("target_train_accuracy needs evaluate_training_set");
  }
}

void to_json(nlohmann::json& j, const TrainSchedule& s) {
  j = {{"learning_rate", s.learning_rate}, {"momentum", s.momentum}, {"batch_size", s.batch_size},
       {"max_epochs", s.max_epochs},       {"threshold", s.threshold}};
  if (s.patience) j["patience"] = *s.patience;
}

void from_json(const nlohmann::json& j, TrainSchedule& s) {
  TrainSchedule d;
  s.learning_rate = j.value("learning_rate", d.learning_rate);
  s.momentum = j.value("momentum", d.momentum);
  s.batch_size = j.value("batch_size", d.batch_size);
  s.max_epochs = j.value("max_epochs", d.max_epochs);
  s.threshold = j.value("threshold", d.threshold);
  if (j.contains("patience") && !j.at("patience").is_null()) s.patience = j.at("patience").get<std::size_t>();
}

std::string training_log_rows(std::size_t epoch, std::string_view split, const Evaluation& evaluation) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  std::string out;
  char loss[32];
  std::snprintf(loss, sizeof loss, "%.6f", evaluation.loss);
  for (const auto& c : evaluation.concepts) {
    out += std::to_string(epoch) + "," + std::string(split) + "," + loss + "," + c.concept_name + "," +
           cell(c.accuracy) + "," + cell(c.precision) + "," + cell(c.recall) + "," + cell(c.f1) + "," +
           std::to_string(c.confusion.tp) + "," + std::to_string(c.confusion.fp) + "," +
           std::to_string(c.confusion.tn) + "," + std::to_string(c.confusion.fn) + "\n";
  }
  return out;
}

namespace {

// LossFn: (const Sample&) -> scalar Tensor; EvalFn: (const ImageSet&) -> Evaluation.
template <typename Model, typename LossFn, typename EvalFn>
TrainResult run_training(Model& model, const ImageSet& train, const ImageSet& val, const TrainSchedule& schedule,
                         LossFn&& sample_loss, EvalFn&& evaluate) {
  schedule.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  if (val.size() == 0) throw DataError("validation set is empty");

  std::ofstream log;
  if (schedule.log_path) {
    if (schedule.log_path->has_parent_path()) std::filesystem::create_directories(schedule.log_path->parent_path());
    log.open(*schedule.log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("cannot write " + schedule.log_path->string());
    log << training_log_header << '\n';
  }
  if (schedule.checkpoint_dir) std::filesystem::create_directories(*schedule.checkpoint_dir);

  const ParameterList params = model.parameters();
  SgdMomentum optimizer(schedule.learning_rate, schedule.momentum);
  std::optional<EarlyStopping> stopper;
  if (schedule.patience) stopper.emplace(*schedule.patience);
  Rng rng(derive_seed(schedule.seed, "shuffle"));

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    deterministic_shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + schedule.batch_size);
      const float inv = 1.0F / static_cast<float>(end - start);
      zero_grads(params);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Tensor loss = sample_loss(train.samples[order[k]]);
        batch_loss += loss.item();
        scale(loss, inv).backward();
      }
      batch_loss /= double(end - start);
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      optimizer.step(params);
      epoch_loss += batch_loss;
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / double(batches);
    record.validation = evaluate(val);
    if (!std::isfinite(record.validation.loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (schedule.evaluate_training_set) record.train = evaluate(train);

    nlohmann::json stats = {{"train_loss", record.train_loss}, {"validation", record.validation.to_json()}};
    if (record.train) stats["train"] = record.train->to_json();
    result.checkpoints.push_back(capture(model, epoch, std::move(stats)));
    if (schedule.checkpoint_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%04zu.ckpt", epoch);
      save_checkpoint(*schedule.checkpoint_dir / name, result.checkpoints.back());
    }
    if (log) {
      if (record.train) log << training_log_rows(epoch, "train", *record.train);
      log << training_log_rows(epoch, "val", record.validation);
      log.flush();
    }
    if (record.validation.loss < best_loss) {
      best_loss = record.validation.loss;
      result.best_index = result.checkpoints.size() - 1;
    }
    spdlog::debug("epoch {}: train loss {:.5f}, val loss {:.5f}", epoch, record.train_loss, record.validation.loss);

    const bool reached = schedule.target_train_accuracy && record.train &&
                         record.train->mean_accuracy() >= *schedule.target_train_accuracy;
    const bool stop = stopper && stopper->update(record.validation.loss);
    result.history.push_back(std::move(record));
    if (stop) {
      result.stopped_early = true;
      break;
    }
    if (reached) break;
  }
  return result;
}

}  // namespace

TrainResult train_vit(ViTModel& model, const ImageSet& train, const ImageSet& val, const BceLossSpec& loss,
                      const TrainSchedule& schedule) {
  if (train.concepts.size() != model.config().num_labels) {
    throw ShapeError("ViT head has " + std::to_string(model.config().num_labels) + " outputs for " +
                     std::to_string(train.concepts.size()) + " concepts");
  }
  loss.validate(train.concepts.size());
  return run_training(
      model, train, val, schedule,
      [&](const Sample& s) { return bce_with_logits(model.forward(s.image), s.labels, loss); },
      [&](const ImageSet& set) { return evaluate_vit(model, set, loss, schedule.threshold); });
}

TrainResult train_cnn(CnnModel& model, const ImageSet& train, const ImageSet& val, std::size_t concept_index,
                      const TrainSchedule& schedule) {
  if (model.config().num_outputs != 2) throw ShapeError("CNN training expects two output logits");
  if (concept_index >= train.concepts.size()) throw ConfigError("concept index out of range");
  return run_training(
      model, train, val, schedule,
      [&](const Sample& s) { return cross_entropy(model.forward(s.image), s.labels[concept_index] ? 1 : 0); },
      [&](const ImageSet& set) { return evaluate_cnn(model, set, concept_index); });
}

}  // namespace numis
