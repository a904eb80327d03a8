#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "numis/labeler.hpp"
#include "numis/random.hpp"

namespace numis {

struct SplitSpec {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetView {
  std::vector<std::string> concepts;
  std::vector<std::string> sample_ids;
  std::vector<std::vector<std::uint8_t>> labels;  // [sample][concept]
  std::optional<std::vector<double>> positive_weights;  // per concept

  std::size_t size() const { return sample_ids.size(); }
  std::size_t positives(std::size_t concept_index) const;
  std::size_t concept_index(const std::string& name) const;
};

// Rows of `table` picked by index, in the given order (repeats allowed).
DatasetView make_view(const LabelTable& table, const std::vector<std::size_t>& rows);
DatasetView make_view(const LabelTable& table);
// Rows of `table` whose ids appear in `ids`, in `ids` order; unknown ids are an error.
DatasetView select_ids(const LabelTable& table, const std::vector<std::string>& ids);

// Assigns every row of `labels` to one of `targets.size()` subsets whose sizes
// are exactly `targets`. Scarcest label first; each of its samples goes to the
// subset wanting that label most, then the one with most room, then a seeded pick.
std::vector<std::size_t> iterative_stratification(const std::vector<std::vector<std::uint8_t>>& labels,
                                                  const std::vector<std::size_t>& targets, Rng& rng);

struct Split {
  DatasetView train;
  DatasetView val;
  DatasetView test;
};

// Test is carved first, then the remainder is split train:val.
Split stratified_split(const LabelTable& table, const SplitSpec& spec);

// negatives / positives per concept.
std::vector<double> positive_weights(const DatasetView& train);

enum class BalanceMode { Undersample, Oversample };

// Single-concept view with equal class counts. Oversampling repeats every
// positive `factor` times against factor * positives distinct negatives;
// factor 0 means min(negatives / positives, 10). When positives outnumber
// negatives, positives are subsampled instead.
DatasetView balance_binary(const DatasetView& view, std::size_t concept_index, BalanceMode mode,
                           std::uint64_t seed, std::size_t factor = 0);

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& ids);
std::vector<std::string> read_manifest(const std::filesystem::path& path);

// Per-concept positive fraction of the full set and of every subset.
nlohmann::json split_report(const Split& split);

}  // namespace numis
