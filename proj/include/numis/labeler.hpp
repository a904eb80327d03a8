#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace numis {

// Splits on whitespace and punctuation and lowercases; accented letters are
// kept (and lowercased for Latin-1 / Latin Extended-A).
std::vector<std::string> tokenize(std::string_view description);

struct ConceptLexicon {
  std::string concept_name;
  std::set<std::string> search_words;
  std::set<std::string> exclusions;

  void validate() const;
};

// 1 iff some whole token is a search word and not an exclusion.
bool label(std::string_view description, const ConceptLexicon& lexicon);
bool label_tokens(const std::vector<std::string>& tokens, const ConceptLexicon& lexicon);

// JSON array of {"concept", "search_words", "exclusions"}; entries are lowercased.
std::vector<ConceptLexicon> load_lexicons(const std::filesystem::path& path);
std::vector<ConceptLexicon> parse_lexicons(std::string_view json_text);
std::string lexicons_to_json(const std::vector<ConceptLexicon>& lexicons);
// Cornucopia, eagle, horse, patera, shield, standing, seated, Hercules.
std::vector<ConceptLexicon> default_lexicons();

std::set<std::string> load_stop_words(const std::filesystem::path& path);
std::set<std::string> default_stop_words();

struct CorpusEntry {
  std::string image_id;
  std::optional<std::string> description;
};

struct TermFrequency {
  std::string word;
  std::size_t documents = 0;
  friend bool operator==(const TermFrequency&, const TermFrequency&) = default;
};

// Document frequency, descending; ties lexicographic. Stop words dropped.
std::vector<TermFrequency> mine_concepts(const std::vector<CorpusEntry>& corpus,
                                         const std::set<std::string>& stop_words);

struct LabelTable {
  std::vector<std::string> concepts;
  std::vector<std::string> image_ids;
  std::vector<std::vector<std::uint8_t>> labels;  // [sample][concept]

  std::size_t size() const { return image_ids.size(); }
  std::size_t positives(std::size_t concept_index) const;
  std::string to_csv() const;
  static LabelTable from_csv(std::string_view text);
};

struct LabelingResult {
  LabelTable table;
  std::vector<std::size_t> positive_counts;
  std::vector<std::string> dropped_ids;  // entries with no description
};

LabelingResult build_label_table(const std::vector<CorpusEntry>& corpus,
                                 const std::vector<ConceptLexicon>& lexicons);

// <image_id>.txt next to each source image; missing files give no description.
std::vector<CorpusEntry> read_descriptions(const std::filesystem::path& dir,
                                           const std::vector<std::string>& image_ids);

}  // namespace numis
