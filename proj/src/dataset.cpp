#include "numis/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "numis/errors.hpp"

namespace numis {

void SplitSpec::validate() const {
  if (train <= 0.0 || val < 0.0 || test <= 0.0) throw ConfigError("split ratios must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1, got " + std::to_string(train + val + test));
  }
}

std::size_t DatasetView::positives(std::size_t concept_index) const {
  std::size_t n = 0;
  for (const auto& row : labels) n += row.at(concept_index);
  return n;
}

std::size_t DatasetView::concept_index(const std::string& name) const {
  const auto it = std::find(concepts.begin(), concepts.end(), name);
  if (it == concepts.end()) throw ConfigError("unknown concept '" + name + "'");
  return static_cast<std::size_t>(it - concepts.begin());
}

DatasetView make_view(const LabelTable& table, const std::vector<std::size_t>& rows) {
  DatasetView view;
  view.concepts = table.concepts;
  for (auto r : rows) {
    view.sample_ids.push_back(table.image_ids.at(r));
    view.labels.push_back(table.labels.at(r));
  }
  return view;
}

DatasetView make_view(const LabelTable& table) {
  DatasetView view;
  view.concepts = table.concepts;
  view.sample_ids = table.image_ids;
  view.labels = table.labels;
  return view;
}

DatasetView select_ids(const LabelTable& table, const std::vector<std::string>& ids) {
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < table.image_ids.size(); ++i) row_of.emplace(table.image_ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw DataError("sample '" + id + "' is not in the label table");
    rows.push_back(it->second);
  }
  return make_view(table, rows);
}

namespace {

// Among candidate subsets, keep those maximizing `key`; exact ties survive.
template <typename Key>
void keep_best(std::vector<std::size_t>& candidates, Key key) {
  double best = -std::numeric_limits<double>::infinity();
  for (auto s : candidates) best = std::max(best, key(s));
  std::erase_if(candidates, [&](std::size_t s) { return key(s) < best; });
}

}  // namespace

std::vector<std::size_t> iterative_stratification(const std::vector<std::vector<std::uint8_t>>& labels,
                                                  const std::vector<std::size_t>& targets, Rng& rng) {
  const std::size_t n = labels.size();
  const std::size_t subsets = targets.size();
  std::size_t total = 0;
  for (auto t : targets) total += t;
  if (total != n) throw ConfigError("subset sizes do not add up to the sample count");
  const std::size_t num_labels = n == 0 ? 0 : labels.front().size();

  std::vector<double> capacity(targets.begin(), targets.end());
  // desire[s][l]: positives of label l that subset s still wants.
  std::vector<std::vector<double>> desire(subsets, std::vector<double>(num_labels, 0.0));
  for (std::size_t l = 0; l < num_labels; ++l) {
    std::size_t pos = 0;
    for (const auto& row : labels) pos += row[l];
    for (std::size_t s = 0; s < subsets; ++s) desire[s][l] = double(pos) * double(targets[s]) / double(n);
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  deterministic_shuffle(order.begin(), order.end(), rng);

  constexpr std::size_t unassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> assignment(n, unassigned);

  auto assign = [&](std::size_t sample, std::vector<std::size_t> candidates) {
    const std::size_t pick = candidates.size() == 1 ? candidates.front()
                                                    : candidates[uniform_index(rng, candidates.size())];
    assignment[sample] = pick;
    capacity[pick] -= 1.0;
    for (std::size_t l = 0; l < num_labels; ++l)
      if (labels[sample][l]) desire[pick][l] -= 1.0;
  };

  auto subsets_with_room = [&] {
    std::vector<std::size_t> c;
    for (std::size_t s = 0; s < subsets; ++s)
      if (capacity[s] > 0.5) c.push_back(s);
    return c;
  };

  while (true) {
    // Scarcest label among unassigned samples.
    std::size_t label = num_labels;
    std::size_t fewest = std::numeric_limits<std::size_t>::max();
    for (std::size_t l = 0; l < num_labels; ++l) {
      std::size_t remaining = 0;
      for (auto i : order) remaining += (assignment[i] == unassigned && labels[i][l]) ? 1 : 0;
      if (remaining > 0 && remaining < fewest) {
        fewest = remaining;
        label = l;
      }
    }
    if (label == num_labels) break;
    for (auto i : order) {
      if (assignment[i] != unassigned || !labels[i][label]) continue;
      auto candidates = subsets_with_room();
      keep_best(candidates, [&](std::size_t s) { return desire[s][label]; });
      keep_best(candidates, [&](std::size_t s) { return capacity[s]; });
      assign(i, std::move(candidates));
    }
  }

  for (auto i : order) {
    if (assignment[i] != unassigned) continue;
    auto candidates = subsets_with_room();
    keep_best(candidates, [&](std::size_t s) { return capacity[s]; });
    assign(i, std::move(candidates));
  }
  return assignment;
}

Split stratified_split(const LabelTable& table, const SplitSpec& spec) {
  spec.validate();
  if (table.size() == 0) throw DataError("cannot split an empty label table");
  if (table.concepts.empty()) throw DataError("cannot split a table without concepts");

  Rng rng(derive_seed(spec.seed, "split"));
  const std::size_t n = table.size();
  const auto n_test = static_cast<std::size_t>(std::llround(double(n) * spec.test));
  const auto first = iterative_stratification(table.labels, {n - n_test, n_test}, rng);

  std::vector<std::size_t> rest_rows;
  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < n; ++i) (first[i] == 0 ? rest_rows : test_rows).push_back(i);

  std::vector<std::vector<std::uint8_t>> rest_labels;
  for (auto r : rest_rows) rest_labels.push_back(table.labels[r]);
  const double val_share = spec.val / (spec.train + spec.val);
  const auto n_val = static_cast<std::size_t>(std::llround(double(rest_rows.size()) * val_share));
  const auto second = iterative_stratification(rest_labels, {rest_rows.size() - n_val, n_val}, rng);

  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  for (std::size_t i = 0; i < rest_rows.size(); ++i) (second[i] == 0 ? train_rows : val_rows).push_back(rest_rows[i]);
  return {make_view(table, train_rows), make_view(table, val_rows), make_view(table, test_rows)};
}

std::vector<double> positive_weights(const DatasetView& train) {
  std::vector<double> weights;
  for (std::size_t c = 0; c < train.concepts.size(); ++c) {
    const auto pos = train.positives(c);
    const auto neg = train.size() - pos;
    if (pos == 0 || neg == 0) {
      throw DataError("concept '" + train.concepts[c] + "' has " + std::to_string(pos) + " positives and " +
                      std::to_string(neg) + " negatives in the training set");
    }
    weights.push_back(double(neg) / double(pos));
  }
  return weights;
}

DatasetView balance_binary(const DatasetView& view, std::size_t concept_index, BalanceMode mode,
                           std::uint64_t seed, std::size_t factor) {
  if (concept_index >= view.concepts.size()) throw ConfigError("concept index out of range");
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < view.size(); ++i) (view.labels[i][concept_index] ? pos : neg).push_back(i);
  const auto& name = view.concepts[concept_index];
  if (pos.empty()) throw DataError("concept '" + name + "' has no positive samples to balance");

  if (neg.empty()) throw DataError("concept '" + name + "' has no negative samples to balance");

  Rng rng(derive_seed(seed, "balance/" + name));
  auto draw = [&rng](std::vector<std::size_t>& from, std::size_t count) {
    deterministic_shuffle(from.begin(), from.end(), rng);
    from.resize(count);
    std::sort(from.begin(), from.end());
  };
  std::size_t repeats = 1;
  if (pos.size() > neg.size()) {
    // Positives are the majority here, so they are the class that gets thinned.
    draw(pos, neg.size());
  } else {
    if (mode == BalanceMode::Oversample) {
      repeats = factor != 0 ? factor : std::clamp<std::size_t>(neg.size() / pos.size(), 1, 10);
    }
    const std::size_t wanted = repeats * pos.size();
    if (wanted > neg.size()) {
      throw DataError("concept '" + name + "' needs " + std::to_string(wanted) + " negatives, only " +
                      std::to_string(neg.size()) + " available");
    }
    draw(neg, wanted);
  }

  DatasetView out;
  out.concepts = {name};
  for (std::size_t r = 0; r < repeats; ++r) {
    for (auto i : pos) {
      out.sample_ids.push_back(view.sample_ids[i]);
      out.labels.push_back({1});
    }
  }
  for (auto i : neg) {
    out.sample_ids.push_back(view.sample_ids[i]);
    out.labels.push_back({0});
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& id : ids) out << id << '\n';
}

std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PrerequisiteError("missing manifest " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

nlohmann::json split_report(const Split& split) {
  const auto& concepts = split.train.concepts;
  auto fraction = [](const DatasetView& v, std::size_t c) {
    return v.size() == 0 ? 0.0 : double(v.positives(c)) / double(v.size());
  };
  nlohmann::json report;
  report["sizes"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  nlohmann::json per_concept = nlohmann::json::object();
  const double total = double(split.train.size() + split.val.size() + split.test.size());
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    const double all = double(split.train.positives(c) + split.val.positives(c) + split.test.positives(c));
    per_concept[concepts[c]] = {{"full", all / total},
                                {"train", fraction(split.train, c)},
                                {"val", fraction(split.val, c)},
                                {"test", fraction(split.test, c)}};
  }
  report["positive_fraction"] = per_concept;
  return report;
}

}  // namespace numis
