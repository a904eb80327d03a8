#pragma once

// Offline stand-ins for auction photographs: grey coin discs carrying simple
// glyphs that play the role of depicted concepts.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "numis/image.hpp"
#include "numis/labeler.hpp"
#include "numis/random.hpp"
#include "numis/segmenter.hpp"
#include "numis/trainer.hpp"

namespace numis {

enum class Glyph { Bar, Ring, Cross, Triangle, Square, Diagonal };

inline constexpr std::size_t glyph_kind_count = 6;
std::string_view glyph_name(Glyph glyph);
std::vector<Glyph> all_glyphs();

inline constexpr std::uint8_t synthetic_background = 230;
inline constexpr std::uint8_t synthetic_disc = 150;
inline constexpr std::uint8_t synthetic_ink = 30;

// size x size reverse face: light background, grey disc, dark glyphs placed in
// shuffled, jittered slots (at most four glyphs).
GrayImage render_reverse(int size, const std::vector<Glyph>& glyphs, Rng& rng);

struct SyntheticSet {
  LabelTable table;
  std::map<std::string, GrayImage> images;

  ImageLoader loader() const;
};

struct GlyphSetSpec {
  std::vector<Glyph> concept_glyphs;
  std::vector<std::string> concept_names;  // defaults to glyph names
  std::vector<Glyph> distractors;          // each appears with probability 0.3
  std::size_t count = 100;
  double prevalence = 0.5;
  double label_noise = 0.0;  // probability of flipping each label
  int size = 32;
  std::string id_prefix = "img";
  std::uint64_t seed = 0;
};

SyntheticSet make_glyph_set(const GlyphSetSpec& spec);

// 20 images, concepts bar/ring, five of each label combination.
SyntheticSet overfit_set(std::uint64_t seed);
// 600 images, concepts bar/ring/cross at 35% prevalence, 10% flipped labels.
SyntheticSet generalization_set(std::uint64_t seed);
// Every glyph kind as a label; used to pretrain the ViT backbone.
SyntheticSet pretrain_set(std::size_t count, std::uint64_t seed);

// ---- photographs ----------------------------------------------------------------

struct Disc {
  int cx = 0;
  int cy = 0;
  int radius = 0;
};

// Pixels with (x - cx)^2 + (y - cy)^2 <= r^2 set to `colour`.
void draw_disc(RgbImage& image, const Disc& disc, Rgb colour);

struct SegmenterFixture {
  std::string name;
  RgbImage image;
  std::vector<Disc> discs;  // as drawn, left to right
  std::optional<RejectionCause> expected_rejection;
};

// Ten photographs: seven conforming (one with a tall blob right of the
// reverse), then inconsistent background, a lone disc, and three discs.
std::vector<SegmenterFixture> segmenter_fixtures();

struct CorpusSpec {
  std::size_t count = 120;
  std::vector<Glyph> concept_glyphs{Glyph::Bar, Glyph::Ring, Glyph::Cross};
  std::vector<std::string> concept_names{"eagle", "horse", "shield"};
  double prevalence = 0.4;
  double reject_fraction = 0.08;  // single-coin photos
  double description_noise = 0.08;
  std::uint64_t seed = 0;
};

struct CorpusTruth {
  std::map<std::string, std::vector<std::uint8_t>> labels;  // glyphs actually drawn
  std::vector<std::string> rejected;                         // written as single-coin photos
};

// coin-NNNN.png plus coin-NNNN.txt descriptions (multilingual, with some weak-label noise).
CorpusTruth write_synthetic_corpus(const std::filesystem::path& dir, const CorpusSpec& spec);

}  // namespace numis
