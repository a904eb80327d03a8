#include "numis/pipeline.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#include "numis/checkpoint.hpp"
#include "numis/errors.hpp"
#include "numis/labeler.hpp"
#include "numis/synthetic.hpp"

namespace numis {

namespace fs = std::filesystem;

// ---- hashing ----------------------------------------------------------------------

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
  }
  Sha256& raw(std::string_view bytes) {
    EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
    return *this;
  }
  // Length prefix keeps ("ab", "c") and ("a", "bc") apart.
  Sha256& update(std::string_view bytes) {
    const std::uint64_t n = bytes.size();
    EVP_DigestUpdate(ctx_.get(), &n, sizeof n);
    return raw(bytes);
  }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[digest[i] >> 4]);
      out.push_back(digits[digest[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Files under `path` (or `path` itself), sorted, hashed by relative name and content.
void hash_tree(Sha256& h, const fs::path& path) {
  if (fs::is_regular_file(path)) {
    h.update(path.filename().string()).update(read_file(path));
    return;
  }
  if (!fs::is_directory(path)) {
    h.update("<missing>");
    return;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) h.update(fs::relative(f, path).generic_string()).update(read_file(f));
}

}  // namespace

std::string sha256_hex(std::string_view bytes) { return Sha256().raw(bytes).hex(); }

// ---- config -----------------------------------------------------------------------

namespace {

std::string_view balance_name(BalanceMode m) { return m == BalanceMode::Undersample ? "undersample" : "oversample"; }

BalanceMode balance_from(const std::string& name) {
  if (name == "undersample") return BalanceMode::Undersample;
  if (name == "oversample") return BalanceMode::Oversample;
  throw ConfigError("train_cnn.balance must be 'undersample' or 'oversample', got '" + name + "'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename T>
T section(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j.at(key).get<T>() : T{};
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const fs::path& base_dir,
                                         std::optional<std::uint64_t> seed_override) {
  PipelineConfig c;
  try {
    if (seed_override) {
      c.seed = *seed_override;
    } else if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
    } else {
      throw ConfigError("config must set \"seed\" (or pass --seed)");
    }
    c.corpus_dir = resolve(base_dir, j.at("corpus_dir").get<std::string>());
    c.output_root = resolve(base_dir, j.at("output_root").get<std::string>());
    c.lexicon_path = resolve(base_dir, j.at("lexicon_path").get<std::string>());
    if (j.contains("stop_words_path")) c.stop_words_path = resolve(base_dir, j.at("stop_words_path").get<std::string>());
    c.segmentation = section<SegmentationParams>(j, "segmentation");
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.train = s.value("train", c.split.train);
      c.split.val = s.value("val", c.split.val);
      c.split.test = s.value("test", c.split.test);
    }
    c.vit = section<ViTConfig>(j, "vit");
    c.cnn = section<CnnConfig>(j, "cnn");
    if (j.contains("pretrain")) {
      c.pretrain_images = j.at("pretrain").value("images", c.pretrain_images);
      c.pretrain_schedule = j.at("pretrain").get<TrainSchedule>();
    }
    c.vit_schedule = section<TrainSchedule>(j, "train_vit");
    c.cnn_schedule = section<TrainSchedule>(j, "train_cnn");
    if (!c.cnn_schedule.patience) c.cnn_schedule.patience = 30;
    if (j.contains("train_cnn")) {
      c.cnn_balance = balance_from(j.at("train_cnn").value("balance", std::string("undersample")));
      c.oversample_factor = j.at("train_cnn").value("oversample_factor", c.oversample_factor);
    }
    if (j.contains("saliency")) {
      c.saliency = j.at("saliency").get<HipeConfig>();
      c.saliency_images = j.at("saliency").value("images", c.saliency_images);
      c.overlay_alpha = j.at("saliency").value("overlay_alpha", c.overlay_alpha);
    }
    c.mine_top = j.value("mine_top", c.mine_top);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.split.seed = c.seed;
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path(), seed_override);
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j = {{"seed", seed},
                      {"corpus_dir", corpus_dir.string()},
                      {"output_root", output_root.string()},
                      {"lexicon_path", lexicon_path.string()},
                      {"segmentation", segmentation},
                      {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
                      {"vit", vit},
                      {"cnn", cnn},
                      {"pretrain", pretrain_schedule},
                      {"train_vit", vit_schedule},
                      {"train_cnn", cnn_schedule},
                      {"saliency", saliency},
                      {"mine_top", mine_top}};
  j["pretrain"]["images"] = pretrain_images;
  j["train_cnn"]["balance"] = balance_name(cnn_balance);
  j["train_cnn"]["oversample_factor"] = oversample_factor;
  j["saliency"]["images"] = saliency_images;
  j["saliency"]["overlay_alpha"] = overlay_alpha;
  if (stop_words_path) j["stop_words_path"] = stop_words_path->string();
  return j;
}

void PipelineConfig::validate() const {
  segmentation.validate();
  split.validate();
  vit.validate();
  cnn.validate();
  pretrain_schedule.validate();
  vit_schedule.validate();
  cnn_schedule.validate();
  saliency.validate();
  if (pretrain_images < 10) throw ConfigError("pretrain.images must be at least 10");
  if (!(overlay_alpha >= 0.0 && overlay_alpha <= 1.0)) throw ConfigError("saliency.overlay_alpha must lie in [0, 1]");
}

// ---- stages -----------------------------------------------------------------------

namespace {

struct Paths {
  fs::path root;
  fs::path stages() const { return root / "stages"; }
  fs::path summary(const std::string& stage) const { return stages() / (stage + ".json"); }
  fs::path crops() const { return root / "crops"; }
  fs::path corpus_report() const { return root / "prepare" / "corpus_report.json"; }
  fs::path concepts_csv() const { return root / "mine" / "concepts.csv"; }
  fs::path labels() const { return root / "labels.csv"; }
  fs::path manifest(const std::string& subset) const { return root / "split" / (subset + ".txt"); }
  fs::path split_report() const { return root / "split" / "split_report.json"; }
  fs::path models() const { return root / "models"; }
  fs::path pretrained() const { return models() / "pretrained.ckpt"; }
  fs::path vit() const { return models() / "vit.ckpt"; }
  fs::path cnn(const std::string& concept_name) const { return models() / ("cnn-" + concept_name + ".ckpt"); }
  fs::path eval(const std::string& model) const { return root / "eval" / (model + ".json"); }
  fs::path saliency() const { return root / "saliency"; }
  fs::path report() const { return root / "report"; }
};

struct StageDef {
  std::string name;
  std::vector<std::string> requires_stages;
  std::function<void(Sha256&, const PipelineConfig&)> hash_inputs;
  std::function<std::vector<fs::path>(const PipelineConfig&, const Paths&)> outputs;
  std::function<nlohmann::json(const PipelineConfig&, const Paths&)> run;
};

LabelTable load_labels(const Paths& p) { return LabelTable::from_csv(read_file(p.labels())); }

DatasetView subset_view(const Paths& p, const LabelTable& table, const std::string& subset) {
  return select_ids(table, read_manifest(p.manifest(subset)));
}

DatasetView single_concept(const DatasetView& view, std::size_t c) {
  DatasetView out;
  out.concepts = {view.concepts.at(c)};
  out.sample_ids = view.sample_ids;
  for (const auto& row : view.labels) out.labels.push_back({row[c]});
  return out;
}

void save_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }
nlohmann::json load_json(const fs::path& path) { return nlohmann::json::parse(read_file(path)); }

std::string fixed(const nlohmann::json& v, int width = 0) {
  char buf[32];
  if (v.is_null()) {
    std::snprintf(buf, sizeof buf, "%*s", width, width ? "n/a" : "");
  } else {
    std::snprintf(buf, sizeof buf, "%*.4f", width, v.get<double>());
  }
  return buf;
}

// ---- stage bodies ---

nlohmann::json run_prepare(const PipelineConfig& c, const Paths& p) {
  if (!fs::is_directory(c.corpus_dir)) throw DataError("corpus directory not found: " + c.corpus_dir.string());
  fs::remove_all(p.crops());
  const auto report = process_corpus(c.corpus_dir, p.crops(), c.segmentation);
  save_json(p.corpus_report(), report.to_json());
  spdlog::info("prepare: {} of {} images accepted", report.accepted, report.total);
  return {{"total", report.total}, {"accepted", report.accepted}, {"rejection_rate", report.rejection_rate()}};
}

std::vector<CorpusEntry> accepted_corpus(const PipelineConfig& c, const Paths& p) {
  const auto report = CorpusReport::from_json(load_json(p.corpus_report()));
  return read_descriptions(c.corpus_dir, report.accepted_ids);
}

nlohmann::json run_mine(const PipelineConfig& c, const Paths& p) {
  const auto corpus = accepted_corpus(c, p);
  if (corpus.empty()) throw DataError("no accepted images to mine descriptions from");
  const auto stop = c.stop_words_path ? load_stop_words(*c.stop_words_path) : default_stop_words();
  const auto ranked = mine_concepts(corpus, stop);
  std::string csv = "word,documents\n";
  for (const auto& t : ranked) csv += t.word + "," + std::to_string(t.documents) + "\n";
  write_file(p.concepts_csv(), csv);
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min(c.mine_top, ranked.size()); ++i) top.push_back({ranked[i].word, ranked[i].documents});
  return {{"distinct_words", ranked.size()}, {"top", top}};
}

nlohmann::json run_label(const PipelineConfig& c, const Paths& p) {
  const auto lexicons = load_lexicons(c.lexicon_path);
  const auto result = build_label_table(accepted_corpus(c, p), lexicons);
  write_file(p.labels(), result.table.to_csv());
  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t i = 0; i < lexicons.size(); ++i) counts[lexicons[i].concept_name] = result.positive_counts[i];
  return {{"rows", result.table.size()}, {"positives", counts}, {"dropped", result.dropped_ids}};
}

nlohmann::json run_split(const PipelineConfig& c, const Paths& p) {
  const auto table = load_labels(p);
  const auto split = stratified_split(table, c.split);
  write_manifest(p.manifest("train"), split.train.sample_ids);
  write_manifest(p.manifest("val"), split.val.sample_ids);
  write_manifest(p.manifest("test"), split.test.sample_ids);
  const auto report = split_report(split);
  save_json(p.split_report(), report);
  return report;
}

nlohmann::json run_pretrain(const PipelineConfig& c, const Paths& p) {
  const auto data = pretrain_set(c.pretrain_images, derive_seed(c.seed, "pretrain-data"));
  const std::size_t n_train = data.table.size() * 4 / 5;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  for (std::size_t i = 0; i < data.table.size(); ++i) (i < n_train ? train_rows : val_rows).push_back(i);
  const auto size = c.vit.image_size;
  const auto train = build_image_set(make_view(data.table, train_rows), data.loader(), size);
  const auto val = build_image_set(make_view(data.table, val_rows), data.loader(), size);

  ViTConfig vc = c.vit;
  vc.num_labels = data.table.concepts.size();
  ViTModel model(vc, derive_seed(c.seed, "vit-init"));
  TrainSchedule schedule = c.pretrain_schedule;
  schedule.seed = derive_seed(c.seed, "pretrain");
  schedule.log_path = p.root / "pretrain" / "log.csv";
  fs::create_directories(p.root / "pretrain");
  const auto result = train_vit(model, train, val, BceLossSpec{}, schedule);
  fs::create_directories(p.models());
  const auto& best = result.checkpoints.at(result.best_index);
  save_checkpoint(p.pretrained(), best);
  const auto& val_eval = result.history.at(result.best_index).validation;
  spdlog::info("pretrain: best epoch {} of {}, val accuracy {:.3f}", best.epoch, result.history.size(),
               val_eval.mean_accuracy());
  return {{"epochs", result.history.size()}, {"best_epoch", best.epoch}, {"validation", val_eval.to_json()}};
}

nlohmann::json run_train_vit(const PipelineConfig& c, const Paths& p) {
  const auto table = load_labels(p);
  const auto train_view = subset_view(p, table, "train");
  const auto val_view = subset_view(p, table, "val");
  const auto loader = directory_loader(p.crops(), "-rev.png");
  const auto size = c.vit.image_size;
  const auto train = build_image_set(train_view, loader, size);
  const auto val = build_image_set(val_view, loader, size);

  ViTModel model = vit_from_checkpoint(load_checkpoint(p.pretrained()));
  ViTConfig expected = c.vit;
  expected.num_labels = model.config().num_labels;
  if (nlohmann::json(expected) != nlohmann::json(model.config())) {
    throw PrerequisiteError("pretrained checkpoint does not match the vit config; rerun `numis pretrain`");
  }
  model.replace_head(table.concepts.size(), derive_seed(c.seed, "vit-head"));
  model.freeze_backbone();

  BceLossSpec loss;
  loss.positive_weights = positive_weights(train_view);
  TrainSchedule schedule = c.vit_schedule;
  schedule.seed = derive_seed(c.seed, "train-vit");
  schedule.checkpoint_dir = p.models() / "vit-epochs";
  schedule.log_path = p.root / "train-vit" / "log.csv";
  fs::remove_all(*schedule.checkpoint_dir);
  fs::create_directories(p.root / "train-vit");
  const auto result = train_vit(model, train, val, loss, schedule);
  const auto& best = result.checkpoints.at(result.best_index);
  save_checkpoint(p.vit(), best);
  return {{"epochs", result.history.size()},
          {"best_epoch", best.epoch},
          {"positive_weights", loss.positive_weights},
          {"trainable_parameters", model.trainable_parameter_count()},
          {"validation", result.history.at(result.best_index).validation.to_json()}};
}

nlohmann::json run_train_cnn(const PipelineConfig& c, const Paths& p) {
  const auto table = load_labels(p);
  const auto train_view = subset_view(p, table, "train");
  const auto val_view = subset_view(p, table, "val");
  const auto loader = directory_loader(p.crops(), "-rev.png");
  fs::create_directories(p.models());
  fs::create_directories(p.root / "train-cnn");
  nlohmann::json per_concept = nlohmann::json::object();
  for (std::size_t k = 0; k < table.concepts.size(); ++k) {
    const auto& name = table.concepts[k];
    const auto balanced = balance_binary(train_view, k, c.cnn_balance, derive_seed(c.seed, "balance"), c.oversample_factor);
    const auto train = build_image_set(balanced, loader, c.cnn.input_size);
    const auto val = build_image_set(single_concept(val_view, k), loader, c.cnn.input_size);
    CnnModel model(c.cnn, derive_seed(c.seed, "cnn-init/" + name));
    TrainSchedule schedule = c.cnn_schedule;
    schedule.seed = derive_seed(c.seed, "train-cnn/" + name);
    schedule.log_path = p.root / "train-cnn" / (name + "-log.csv");
    const auto result = train_cnn(model, train, val, 0, schedule);
    const auto& best = result.checkpoints.at(result.best_index);
    save_checkpoint(p.cnn(name), best);
    per_concept[name] = {{"epochs", result.history.size()},
                         {"best_epoch", best.epoch},
                         {"stopped_early", result.stopped_early},
                         {"train_samples", balanced.size()}};
    spdlog::info("train-cnn: {} best epoch {} of {}", name, best.epoch, result.history.size());
  }
  return per_concept;
}

nlohmann::json run_eval(const PipelineConfig& c, const Paths& p) {
  const auto table = load_labels(p);
  const auto test_view = subset_view(p, table, "test");
  const auto loader = directory_loader(p.crops(), "-rev.png");

  const ViTModel vit = vit_from_checkpoint(load_checkpoint(p.vit()));
  const auto vit_eval = evaluate_vit(vit, build_image_set(test_view, loader, vit.config().image_size), BceLossSpec{},
                                     c.vit_schedule.threshold);
  save_json(p.eval("vit"), vit_eval.to_json());

  Evaluation cnn_eval;
  for (std::size_t k = 0; k < table.concepts.size(); ++k) {
    const auto path = p.cnn(table.concepts[k]);
    if (!fs::exists(path)) throw PrerequisiteError("missing " + path.string() + "; run `numis train-cnn` first");
    const CnnModel cnn = cnn_from_checkpoint(load_checkpoint(path));
    const auto e = evaluate_cnn(cnn, build_image_set(single_concept(test_view, k), loader, cnn.config().input_size), 0);
    cnn_eval.loss += e.loss / double(table.concepts.size());
    cnn_eval.concepts.push_back(e.concepts.front());
  }
  save_json(p.eval("cnn"), cnn_eval.to_json());
  return {{"test_samples", test_view.size()},
          {"vit_mean_accuracy", vit_eval.mean_accuracy()},
          {"cnn_mean_accuracy", cnn_eval.mean_accuracy()}};
}

nlohmann::json run_saliency(const PipelineConfig& c, const Paths& p) {
  const auto ids = read_manifest(p.manifest("test"));
  const ViTModel model = vit_from_checkpoint(load_checkpoint(p.vit()));
  const auto concepts = load_labels(p).concepts;
  const auto size = static_cast<int>(model.config().image_size);
  fs::remove_all(p.saliency());
  fs::create_directories(p.saliency());
  nlohmann::json outputs = nlohmann::json::array();
  std::size_t calls = 0;
  for (std::size_t i = 0; i < std::min(ids.size(), c.saliency_images); ++i) {
    GrayImage image = read_gray(p.crops() / (ids[i] + "-rev.png"));
    if (image.width() != size || image.height() != size) image = resize_bilinear(image, size, size);
    const Tensor input = to_tensor(image);
    for (std::size_t k = 0; k < concepts.size(); ++k) {
      SaliencyStats stats;
      const auto map = attribute(vit_score(model, k), input, c.saliency, &stats);
      calls += stats.model_calls;
      const std::string stem = ids[i] + "-" + concepts[k] + "-saliency";
      write_png(p.saliency() / (stem + ".png"), render(map, image, c.overlay_alpha));
      write_pfm(p.saliency() / (stem + ".pfm"), map);
      outputs.push_back(stem);
    }
  }
  return {{"maps", outputs}, {"model_calls", calls}};
}

nlohmann::json run_report(const PipelineConfig&, const Paths& p) {
  std::string csv = "model,concept,accuracy,precision,recall,f1\n";
  std::string text;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %-14s %9s %9s %9s %9s\n", "model", "concept", "accuracy", "precision",
                "recall", "f1");
  text += line;
  for (const std::string model : {"vit", "cnn"}) {
    const auto e = load_json(p.eval(model));
    for (const auto& row : e.at("concepts")) {
      const auto name = row.at("concept").get<std::string>();
      csv += model + "," + name + "," + fixed(row.at("accuracy")) + "," + fixed(row.at("precision")) + "," +
             fixed(row.at("recall")) + "," + fixed(row.at("f1")) + "\n";
      std::snprintf(line, sizeof line, "%-6s %-14s %s %s %s %s\n", model.c_str(), name.c_str(),
                    fixed(row.at("accuracy"), 9).c_str(), fixed(row.at("precision"), 9).c_str(),
                    fixed(row.at("recall"), 9).c_str(), fixed(row.at("f1"), 9).c_str());
      text += line;
    }
  }
  write_file(p.report() / "metrics.csv", csv);
  write_file(p.report() / "metrics.txt", text);
  return {{"metrics_csv_sha256", sha256_hex(csv)}};
}

void hash_config(Sha256& h, const nlohmann::json& j) { h.update(j.dump()); }

const std::vector<StageDef>& stages() {
  static const std::vector<StageDef> defs = [] {
    std::vector<StageDef> d;
    d.push_back({"prepare",
                 {},
                 [](Sha256& h, const PipelineConfig& c) {
                   hash_config(h, c.segmentation);
                   hash_tree(h, c.corpus_dir);
                 },
                 [](const PipelineConfig&, const Paths& p) { return std::vector{p.crops(), p.corpus_report()}; },
                 run_prepare});
    d.push_back({"mine",
                 {"prepare"},
                 [](Sha256& h, const PipelineConfig& c) {
                   h.update(std::to_string(c.mine_top));
                   if (c.stop_words_path) hash_tree(h, *c.stop_words_path);
                 },
                 [](const PipelineConfig&, const Paths& p) { return std::vector{p.concepts_csv()}; },
                 run_mine});
    d.push_back({"label",
                 {"prepare"},
                 [](Sha256& h, const PipelineConfig& c) { hash_tree(h, c.lexicon_path); },
                 [](const PipelineConfig&, const Paths& p) { return std::vector{p.labels()}; },
                 run_label});
    d.push_back({"split",
                 {"label"},
                 [](Sha256& h, const PipelineConfig& c) {
                   hash_config(h, {c.split.train, c.split.val, c.split.test});
                 },
                 [](const PipelineConfig&, const Paths& p) {
                   return std::vector{p.manifest("train"), p.manifest("val"), p.manifest("test"), p.split_report()};
                 },
                 run_split});
    d.push_back({"pretrain",
                 {},
                 [](Sha256& h, const PipelineConfig& c) {
                   hash_config(h, {c.vit, c.pretrain_schedule, c.pretrain_images});
                 },
                 [](const PipelineConfig&, const Paths& p) { return std::vector{p.pretrained()}; },
                 run_pretrain});
    d.push_back({"train-vit",
                 {"split", "pretrain"},
                 [](Sha256& h, const PipelineConfig& c) { hash_config(h, c.vit_schedule); },
                 [](const PipelineConfig&, const Paths& p) { return std::vector{p.vit()}; },
                 run_train_vit});
    d.push_back({"train-cnn",
                 {"split"},
                 [](Sha256& h, const PipelineConfig& c) {
                   hash_config(h, {c.cnn, c.cnn_schedule, balance_name(c.cnn_balance), c.oversample_factor});
                 },
                 [](const PipelineConfig&, const Paths& p) {
                   std::vector<fs::path> out;
                   for (const auto& name : load_labels(p).concepts) out.push_back(p.cnn(name));
                   return out;
                 },
                 run_train_cnn});
    d.push_back({"eval",
                 {"train-vit", "train-cnn"},
                 [](Sha256& h, const PipelineConfig& c) { h.update(std::to_string(c.vit_schedule.threshold)); },
                 [](const PipelineConfig&, const Paths& p) { return std::vector{p.eval("vit"), p.eval("cnn")}; },
                 run_eval});
    d.push_back({"saliency",
                 {"train-vit", "split"},
                 [](Sha256& h, const PipelineConfig& c) {
                   hash_config(h, {c.saliency, c.saliency_images, c.overlay_alpha});
                 },
                 [](const PipelineConfig&, const Paths& p) { return std::vector{p.saliency()}; },
                 run_saliency});
    d.push_back({"report",
                 {"eval"},
                 [](Sha256&, const PipelineConfig&) {},
                 [](const PipelineConfig&, const Paths& p) {
                   return std::vector{p.report() / "metrics.csv", p.report() / "metrics.txt"};
                 },
                 run_report});
    return d;
  }();
  return defs;
}

const StageDef& find_stage(const std::string& name) {
  for (const auto& s : stages())
    if (s.name == name) return s;
  throw ConfigError("unknown stage '" + name + "'");
}

std::string outputs_hash(const std::vector<fs::path>& outputs) {
  Sha256 h;
  for (const auto& o : outputs) hash_tree(h, o);
  return h.hex();
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : stages()) n.push_back(s.name);
    return n;
  }();
  return names;
}

StageStatus run_stage(const std::string& stage, const PipelineConfig& config, bool force) {
  const StageDef& def = find_stage(stage);
  const Paths paths{config.output_root};

  Sha256 h;
  h.update(def.name).update(std::to_string(config.seed));
  for (const auto& req : def.requires_stages) {
    const auto summary = paths.summary(req);
    if (!fs::exists(summary)) {
      throw PrerequisiteError("stage '" + stage + "' needs the outputs of '" + req + "'; run `numis " + req +
                              "` first");
    }
    h.update(load_json(summary).at("output_hash").get<std::string>());
  }
  def.hash_inputs(h, config);
  const std::string input_hash = h.hex();

  const auto summary_path = paths.summary(stage);
  if (!force && fs::exists(summary_path)) {
    const auto previous = load_json(summary_path);
    const auto outputs = def.outputs(config, paths);
    const bool present = std::all_of(outputs.begin(), outputs.end(), [](const fs::path& o) { return fs::exists(o); });
    if (previous.value("input_hash", "") == input_hash && present &&
        previous.value("output_hash", "") == outputs_hash(outputs)) {
      spdlog::info("{}: up to date", stage);
      return StageStatus::UpToDate;
    }
  }

  spdlog::info("{}: running", stage);
  fs::create_directories(paths.stages());
  fs::remove(summary_path);
  nlohmann::json details = def.run(config, paths);
  const auto outputs = def.outputs(config, paths);
  nlohmann::json listed = nlohmann::json::array();
  for (const auto& o : outputs) listed.push_back(fs::relative(o, paths.root).generic_string());
  const nlohmann::json summary = {{"stage", stage},
                                  {"seed", config.seed},
                                  {"input_hash", input_hash},
                                  {"output_hash", outputs_hash(outputs)},
                                  {"outputs", listed},
                                  {"details", details}};
  save_json(summary_path, summary);
  return StageStatus::Ran;
}

void run_pipeline(const PipelineConfig& config, bool force) {
  for (const auto& name : stage_names()) run_stage(name, config, force);
}

// ---- demo project -----------------------------------------------------------------

void write_demo_project(const fs::path& dir, std::size_t images, std::uint64_t seed) {
  CorpusSpec spec;
  spec.count = images;
  spec.seed = seed;
  write_synthetic_corpus(dir / "corpus", spec);

  std::vector<ConceptLexicon> lexicons;
  for (const auto& lex : default_lexicons()) {
    if (std::find(spec.concept_names.begin(), spec.concept_names.end(), lex.concept_name) != spec.concept_names.end()) {
      lexicons.push_back(lex);
    }
  }
  write_file(dir / "lexicons.json", lexicons_to_json(lexicons));
  std::string stop;
  for (const auto& w : default_stop_words()) stop += w + "\n";
  write_file(dir / "stopwords.txt", stop);

  const nlohmann::json config = {
      {"seed", seed},
      {"corpus_dir", "corpus"},
      {"output_root", "out"},
      {"lexicon_path", "lexicons.json"},
      {"stop_words_path", "stopwords.txt"},
      {"vit", ViTConfig{}},
      {"cnn", CnnConfig::tiny()},
      {"pretrain", {{"images", 400}, {"learning_rate", 0.01}, {"batch_size", 8}, {"max_epochs", 15}}},
      {"train_vit", {{"learning_rate", 0.01}, {"batch_size", 8}, {"max_epochs", 15}}},
      {"train_cnn", {{"learning_rate", 0.001}, {"batch_size", 4}, {"max_epochs", 15}, {"patience", 30},
                     {"balance", "undersample"}}},
      {"saliency", {{"images", 2}, {"max_depth", 3}}},
  };
  write_file(dir / "config.json", config.dump(2) + "\n");
}

}  // namespace numis
