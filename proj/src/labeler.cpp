#include "numis/labeler.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "numis/errors.hpp"

namespace numis {

namespace {

bool is_word_codepoint(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9');
  }
  if (cp >= 0xA0 && cp <= 0xBF) return false;  // NBSP, inverted marks, guillemets, middle dot
  if (cp == 0xD7 || cp == 0xF7) return false;
  if (cp >= 0x2000 && cp <= 0x206F) return false;  // general punctuation
  if (cp >= 0x3000 && cp <= 0x303F) return false;
  return true;
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  if ((cp >= 0x100 && cp <= 0x137) || (cp >= 0x14A && cp <= 0x177)) return cp | 1U;
  if ((cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E)) return (cp % 2 == 1) ? cp + 1 : cp;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes one code point at `i`, advancing it. Malformed bytes decode to U+FFFD's
// separator stand-in (a space).
char32_t next_codepoint(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i++]);
  if (b0 < 0x80) return b0;
  int extra = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    extra = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    extra = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    extra = 3;
    cp = b0 & 0x07;
  } else {
    return U' ';
  }
  for (int k = 0; k < extra; ++k) {
    if (i >= s.size() || (static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) return U' ';
    cp = (cp << 6) | (static_cast<unsigned char>(s[i++]) & 0x3F);
  }
  return cp;
}

std::string lowercase_word(std::string_view word) {
  auto tokens = tokenize(word);
  if (tokens.size() != 1) throw ConfigError("lexicon entry '" + std::string(word) + "' is not a single word");
  return tokens.front();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::string> tokenize(std::string_view description) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < description.size()) {
    const char32_t cp = next_codepoint(description, i);
    if (is_word_codepoint(cp)) {
      append_utf8(current, to_lower(cp));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

void ConceptLexicon::validate() const {
  if (concept_name.empty()) throw ConfigError("lexicon without a concept name");
  if (concept_name.find_first_of(",\n\r\"") != std::string::npos) {
    throw ConfigError("concept name '" + concept_name + "' is not CSV-safe");
  }
  if (search_words.empty()) throw ConfigError("lexicon '" + concept_name + "' has no search words");
  for (const auto& w : exclusions) {
    if (search_words.count(w) != 0) {
      throw ConfigError("lexicon '" + concept_name + "' both searches and excludes '" + w + "'");
    }
  }
}

bool label_tokens(const std::vector<std::string>& tokens, const ConceptLexicon& lexicon) {
  return std::any_of(tokens.begin(), tokens.end(), [&](const std::string& t) {
    return lexicon.search_words.count(t) != 0 && lexicon.exclusions.count(t) == 0;
  });
}

bool label(std::string_view description, const ConceptLexicon& lexicon) {
  return label_tokens(tokenize(description), lexicon);
}

std::vector<ConceptLexicon> parse_lexicons(std::string_view json_text) {
  const auto doc = nlohmann::json::parse(json_text);
  if (!doc.is_array()) throw ConfigError("lexicon file must hold a JSON array");
  std::vector<ConceptLexicon> out;
  for (const auto& entry : doc) {
    ConceptLexicon lex;
    lex.concept_name = entry.at("concept").get<std::string>();
    for (const auto& w : entry.at("search_words")) lex.search_words.insert(lowercase_word(w.get<std::string>()));
    if (entry.contains("exclusions")) {
      for (const auto& w : entry.at("exclusions")) lex.exclusions.insert(lowercase_word(w.get<std::string>()));
    }
    lex.validate();
    out.push_back(std::move(lex));
  }
  return out;
}

std::vector<ConceptLexicon> load_lexicons(const std::filesystem::path& path) {
  try {
    return parse_lexicons(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed lexicon file " + path.string() + ": " + e.what());
  }
}

std::string lexicons_to_json(const std::vector<ConceptLexicon>& lexicons) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& lex : lexicons) {
    doc.push_back({{"concept", lex.concept_name},
                   {"search_words", lex.search_words},
                   {"exclusions", lex.exclusions}});
  }
  return doc.dump(2) + "\n";
}

std::vector<ConceptLexicon> default_lexicons() {
  // English forms plus a few common translations; extend through a lexicon file.
  return {
      {"cornucopia", {"cornucopia", "cornucopiae", "cornucopias", "corne", "füllhorn", "cornucopie"}, {}},
      {"eagle", {"eagle", "eagles", "aigle", "aigles", "adler", "águila", "aquila"}, {}},
      {"horse", {"horse", "horses", "horseback", "cheval", "chevaux", "pferd", "pferde", "caballo", "caballos", "equus"}, {}},
      {"patera", {"patera", "paterae", "patère", "pátera"}, {}},
      {"shield", {"shield", "shields", "bouclier", "boucliers", "schild", "escudo", "clipeus"}, {}},
      {"standing", {"standing", "stands", "debout", "stehend", "stehende", "stante"}, {}},
      {"seated", {"seated", "sitting", "assis", "assise", "sedens", "sitzend", "sentado", "sentada"}, {}},
      {"hercules", {"hercules", "hercule", "herkules", "hércules", "heracles"}, {"herakles"}},
  };
}

std::set<std::string> load_stop_words(const std::filesystem::path& path) {
  std::set<std::string> words;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    for (auto& t : tokenize(line)) words.insert(std::move(t));
  }
  return words;
}

std::set<std::string> default_stop_words() {
  return {"i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours",
          "yourself", "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself",
          "it", "its", "itself", "they", "them", "their", "theirs", "themselves", "what", "which",
          "who", "whom", "this", "that", "these", "those", "am", "is", "are", "was", "were", "be",
          "been", "being", "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an",
          "the", "and", "but", "if", "or", "because", "as", "until", "while", "of", "at", "by",
          "for", "with", "about", "against", "between", "into", "through", "during", "before",
          "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over",
          "under", "again", "further", "then", "once", "here", "there", "when", "where", "why",
          "how", "all", "any", "both", "each", "few", "more", "most", "other", "some", "such", "no",
          "nor", "not", "only", "own", "same", "so", "than", "too", "very", "s", "t", "can",
          "will", "just", "don", "should", "now"};
}

std::vector<TermFrequency> mine_concepts(const std::vector<CorpusEntry>& corpus,
                                         const std::set<std::string>& stop_words) {
  if (corpus.empty()) throw DataError("cannot mine concepts from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& entry : corpus) {
    if (!entry.description) continue;
    auto tokens = tokenize(*entry.description);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto& t : tokens)
      if (stop_words.count(t) == 0) ++counts[t];
  }
  std::vector<TermFrequency> ranked;
  ranked.reserve(counts.size());
  for (auto& [word, n] : counts) ranked.push_back({word, n});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const TermFrequency& a, const TermFrequency& b) { return a.documents > b.documents; });
  return ranked;
}

std::size_t LabelTable::positives(std::size_t concept_index) const {
  std::size_t n = 0;
  for (const auto& row : labels) n += row.at(concept_index);
  return n;
}

std::string LabelTable::to_csv() const {
  std::string out = "image_id";
  for (const auto& c : concepts) out += "," + c;
  out += "\n";
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    out += image_ids[i];
    for (auto v : labels[i]) out += v ? ",1" : ",0";
    out += "\n";
  }
  return out;
}

LabelTable LabelTable::from_csv(std::string_view text) {
  LabelTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) throw DataError("label CSV is empty");
  auto header = split(line);
  if (header.empty() || header.front() != "image_id") throw DataError("label CSV must start with image_id");
  table.concepts.assign(header.begin() + 1, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) {
      throw DataError("label CSV line " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()));
    }
    std::vector<std::uint8_t> row;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c] != "0" && cells[c] != "1") {
        throw DataError("label CSV line " + std::to_string(line_no) + " has non-binary value '" + cells[c] + "'");
      }
      row.push_back(cells[c] == "1" ? 1 : 0);
    }
    table.image_ids.push_back(cells.front());
    table.labels.push_back(std::move(row));
  }
  return table;
}

LabelingResult build_label_table(const std::vector<CorpusEntry>& corpus,
                                 const std::vector<ConceptLexicon>& lexicons) {
  if (lexicons.empty()) throw ConfigError("no concept lexicons configured");
  LabelingResult result;
  for (const auto& lex : lexicons) {
    lex.validate();
    result.table.concepts.push_back(lex.concept_name);
  }
  result.positive_counts.assign(lexicons.size(), 0);
  for (const auto& entry : corpus) {
    if (!entry.description) {
      spdlog::warn("no description for {}; dropping it from the label table", entry.image_id);
      result.dropped_ids.push_back(entry.image_id);
      continue;
    }
    const auto tokens = tokenize(*entry.description);
    std::vector<std::uint8_t> row;
    for (std::size_t c = 0; c < lexicons.size(); ++c) {
      const bool positive = label_tokens(tokens, lexicons[c]);
      row.push_back(positive ? 1 : 0);
      result.positive_counts[c] += positive ? 1 : 0;
    }
    result.table.image_ids.push_back(entry.image_id);
    result.table.labels.push_back(std::move(row));
  }
  return result;
}

std::vector<CorpusEntry> read_descriptions(const std::filesystem::path& dir,
                                           const std::vector<std::string>& image_ids) {
  std::vector<CorpusEntry> out;
  for (const auto& id : image_ids) {
    const auto path = dir / (id + ".txt");
    CorpusEntry entry{id, std::nullopt};
    if (std::filesystem::is_regular_file(path)) entry.description = read_text(path);
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace numis
