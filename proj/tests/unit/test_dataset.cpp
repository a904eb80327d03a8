#include <gtest/gtest.h>

#include <array>
#include <filesystem>
#include <limits>
#include <random>
#include <set>

#include "numis/dataset.hpp"
#include "numis/errors.hpp"
#include "../oracles.hpp"

using namespace numis;
using namespace numis::oracle;

namespace {

LabelTable random_table(std::size_t n, std::size_t concepts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::uint8_t>> labels(n, std::vector<std::uint8_t>(concepts));
  std::vector<double> prevalence(concepts);
  for (auto& p : prevalence) p = 0.1 + 0.5 * double(rng() % 1000) / 1000.0;
  for (auto& row : labels)
    for (std::size_t c = 0; c < concepts; ++c) row[c] = double(rng() % 1000) / 1000.0 < prevalence[c];
  for (std::size_t c = 0; c < concepts; ++c) labels[c % n][c] = 1;
  return make_table(labels, concepts);
}

std::vector<const DatasetView*> parts(const Split& s) { return {&s.train, &s.val, &s.test}; }

}  // namespace

TEST(Split, SingleLabelHalfPositiveIsExact) {
  std::vector<std::vector<std::uint8_t>> labels;
  for (int i = 0; i < 100; ++i) labels.push_back({std::uint8_t(i % 2)});
  SplitSpec spec;
  spec.seed = 3;
  const Split s = stratified_split(make_table(labels, 1), spec);
  EXPECT_EQ(s.train.size(), 64U);
  EXPECT_EQ(s.val.size(), 16U);
  EXPECT_EQ(s.test.size(), 20U);
  EXPECT_EQ(s.train.positives(0), 32U);
  EXPECT_EQ(s.val.positives(0), 8U);
  EXPECT_EQ(s.test.positives(0), 10U);
}

TEST(Split, TwentyFiveSampleFixtureIsWithinOneOfBruteForce) {
  const auto optima = brute_force_optima({4, 7, 6, 8}, {16, 4, 5});
  ASSERT_FALSE(optima.empty());
  const LabelTable table = fixture25();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitSpec spec;
    spec.seed = seed;
    const Split s = stratified_split(table, spec);
    Counts ours{};
    const auto views = parts(s);
    for (int k = 0; k < 3; ++k)
      for (int l = 0; l < 2; ++l) ours[k][l] = int(views[k]->positives(l));
    const bool near_some_optimum = std::any_of(optima.begin(), optima.end(), [&](const Counts& opt) {
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 2; ++l)
          if (std::abs(ours[k][l] - opt[k][l]) > 1) return false;
      return true;
    });
    EXPECT_TRUE(near_some_optimum) << "seed " << seed;
  }
}

TEST(Split, PartitionAndDeterminismOverSeeds) {
  const LabelTable table = random_table(137, 4, 17);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitSpec spec;
    spec.seed = seed;
    const Split a = stratified_split(table, spec);
    const Split b = stratified_split(table, spec);
    std::multiset<std::string> all;
    for (const auto* v : parts(a)) all.insert(v->sample_ids.begin(), v->sample_ids.end());
    EXPECT_EQ(all.size(), table.size());
    EXPECT_EQ(std::set<std::string>(all.begin(), all.end()), std::set<std::string>(table.image_ids.begin(), table.image_ids.end()));
    EXPECT_EQ(a.train.sample_ids, b.train.sample_ids);
    EXPECT_EQ(a.val.sample_ids, b.val.sample_ids);
    EXPECT_EQ(a.test.sample_ids, b.test.sample_ids);
  }
}

TEST(Split, ProportionsTrackTheFullSet) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const std::size_t n = 100 + 37 * trial;
    const LabelTable table = random_table(n, 3, 100 + trial);
    SplitSpec spec;
    spec.seed = trial;
    const Split s = stratified_split(table, spec);
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = double(table.positives(c)) / double(n);
      for (const auto* v : parts(s)) {
        // Each subset holds its proportional share of positives to within two samples.
        EXPECT_LE(std::abs(double(v->positives(c)) - p * double(v->size())), 2.0)
            << "n=" << n << " concept " << c << " subset size " << v->size();
      }
    }
  }
}

TEST(Split, RatiosMustSumToOne) {
  SplitSpec spec;
  spec.test = 0.3;
  EXPECT_THROW(stratified_split(random_table(20, 1, 1), spec), ConfigError);
}

TEST(Stratification, ExactSubsetSizes) {
  Rng rng(4);
  const LabelTable t = random_table(50, 3, 5);
  const auto assignment = iterative_stratification(t.labels, {30, 15, 5}, rng);
  std::array<std::size_t, 3> sizes{};
  for (auto a : assignment) ++sizes.at(a);
  EXPECT_EQ(sizes, (std::array<std::size_t, 3>{30, 15, 5}));
  EXPECT_THROW(iterative_stratification(t.labels, {10, 10}, rng), ConfigError);
}

TEST(PositiveWeights, RatioOfNegativesToPositives) {
  std::vector<std::vector<std::uint8_t>> labels;
  for (int i = 0; i < 120; ++i) labels.push_back({std::uint8_t(i < 30), std::uint8_t(i % 2)});
  const auto w = positive_weights(make_view(make_table(labels, 2)));
  EXPECT_DOUBLE_EQ(w[0], 3.0);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
}

TEST(PositiveWeights, DegenerateConceptIsNamed) {
  const auto view = make_view(make_table({{1, 0}, {1, 1}}, 2));
  try {
    positive_weights(view);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'c0'"), std::string::npos);
  }
}

namespace {

DatasetView ten_of_hundred_ten() {
  std::vector<std::vector<std::uint8_t>> labels;
  for (int i = 0; i < 110; ++i) labels.push_back({std::uint8_t(i % 11 == 0)});
  return make_view(make_table(labels, 1));
}

}  // namespace

TEST(Balance, UndersampleKeepsEveryPositive) {
  const DatasetView view = ten_of_hundred_ten();
  const DatasetView out = balance_binary(view, 0, BalanceMode::Undersample, 1);
  EXPECT_EQ(out.size(), 20U);
  EXPECT_EQ(out.positives(0), 10U);
  std::set<std::string> pos;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out.labels[i][0]) pos.insert(out.sample_ids[i]);
  EXPECT_EQ(pos.size(), 10U);
}

TEST(Balance, OversampleRepeatsPositives) {
  const DatasetView out = balance_binary(ten_of_hundred_ten(), 0, BalanceMode::Oversample, 1, 3);
  EXPECT_EQ(out.size(), 60U);
  EXPECT_EQ(out.positives(0), 30U);
  std::set<std::string> pos, neg;
  for (std::size_t i = 0; i < out.size(); ++i) (out.labels[i][0] ? pos : neg).insert(out.sample_ids[i]);
  EXPECT_EQ(pos.size(), 10U);
  EXPECT_EQ(neg.size(), 30U);
}

TEST(Balance, SameSeedSameSelection) {
  const DatasetView view = ten_of_hundred_ten();
  EXPECT_EQ(balance_binary(view, 0, BalanceMode::Undersample, 7).sample_ids,
            balance_binary(view, 0, BalanceMode::Undersample, 7).sample_ids);
  EXPECT_NE(balance_binary(view, 0, BalanceMode::Undersample, 7).sample_ids,
            balance_binary(view, 0, BalanceMode::Undersample, 8).sample_ids);
}

TEST(Balance, MajorityPositivesAreThinned) {
  std::vector<std::vector<std::uint8_t>> labels;
  for (int i = 0; i < 30; ++i) labels.push_back({std::uint8_t(i < 20)});
  const DatasetView out = balance_binary(make_view(make_table(labels, 1)), 0, BalanceMode::Undersample, 2);
  EXPECT_EQ(out.size(), 20U);
  EXPECT_EQ(out.positives(0), 10U);
}

TEST(Balance, SingleClassThrows) {
  const auto view = make_view(make_table({{0}, {0}}, 1));
  EXPECT_THROW(balance_binary(view, 0, BalanceMode::Undersample, 1), DataError);
}

TEST(Manifest, RoundTripAndMissingFile) {
  const auto path = std::filesystem::temp_directory_path() / "numis-manifest" / "train.txt";
  write_manifest(path, {"a", "b", "c"});
  EXPECT_EQ(read_manifest(path), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_THROW(read_manifest(path.parent_path() / "absent.txt"), PrerequisiteError);
}

TEST(Views, SelectIdsKeepsOrderAndRejectsUnknown) {
  const LabelTable t = make_table({{1}, {0}, {1}}, 1);
  const DatasetView v = select_ids(t, {"s1002", "s1000"});
  EXPECT_EQ(v.sample_ids, (std::vector<std::string>{"s1002", "s1000"}));
  EXPECT_THROW(select_ids(t, {"nope"}), DataError);
}
