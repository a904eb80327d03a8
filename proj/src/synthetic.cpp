#include "numis/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "numis/errors.hpp"

namespace numis {

namespace {

double unit(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }
double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }
bool chance(Rng& rng, double p) { return unit(rng) < p; }

std::uint8_t noisy(std::uint8_t base, Rng& rng, int amplitude) {
  const int v = int(base) + int(uniform_index(rng, std::size_t(2 * amplitude + 1))) - amplitude;
  return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

// Offsets (dx, dy) relative to the glyph centre, in units of the face size.
bool glyph_covers(Glyph g, double dx, double dy) {
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  switch (g) {
    case Glyph::Bar:
      return ax <= 0.045 && ay <= 0.14;
    case Glyph::Ring: {
      const double r = std::hypot(dx, dy);
      return r >= 0.07 && r <= 0.13;
    }
    case Glyph::Cross:
      return (ax <= 0.04 && ay <= 0.13) || (ay <= 0.04 && ax <= 0.13);
    case Glyph::Triangle:
      return dy >= -0.12 && dy <= 0.12 && ax <= (dy + 0.12) / 0.24 * 0.13;
    case Glyph::Square: {
      const double m = std::max(ax, ay);
      return m >= 0.08 && m <= 0.13;
    }
    case Glyph::Diagonal:
      return std::abs(dx - dy) / std::sqrt(2.0) <= 0.04 && std::abs(dx + dy) / std::sqrt(2.0) <= 0.15;
  }
  return false;
}

std::string numbered(const std::string& prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "-%04zu", i);
  return prefix + buf;
}

}  // namespace

std::string_view glyph_name(Glyph glyph) {
  static constexpr std::array<std::string_view, glyph_kind_count> names{"bar",    "ring",   "cross",
                                                                        "triangle", "square", "diagonal"};
  return names.at(static_cast<std::size_t>(glyph));
}

std::vector<Glyph> all_glyphs() {
  return {Glyph::Bar, Glyph::Ring, Glyph::Cross, Glyph::Triangle, Glyph::Square, Glyph::Diagonal};
}

GrayImage render_reverse(int size, const std::vector<Glyph>& glyphs, Rng& rng) {
  if (size < 8) throw ConfigError("reverse faces need at least 8 pixels");
  if (glyphs.size() > 4) throw ConfigError("a reverse face holds at most four glyphs");
  std::array<std::pair<double, double>, 4> slots{{{-0.2, -0.2}, {0.2, -0.2}, {-0.2, 0.2}, {0.2, 0.2}}};
  deterministic_shuffle(slots.begin(), slots.end(), rng);
  struct Placed {
    Glyph kind;
    double x, y;
  };
  std::vector<Placed> placed;
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    placed.push_back({glyphs[i], 0.5 + slots[i].first + uniform(rng, -0.04, 0.04),
                      0.5 + slots[i].second + uniform(rng, -0.04, 0.04)});
  }
  GrayImage out(size, size, synthetic_background);
  const double s = size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / s;
      const double v = (y + 0.5) / s;
      if (std::hypot(u - 0.5, v - 0.5) > 0.46) continue;
      bool ink = false;
      for (const auto& p : placed) ink = ink || glyph_covers(p.kind, u - p.x, v - p.y);
      out.at(x, y) = noisy(ink ? synthetic_ink : synthetic_disc, rng, 8);
    }
  }
  return out;
}

ImageLoader SyntheticSet::loader() const {
  return [this](const std::string& id) {
    const auto it = images.find(id);
    if (it == images.end()) throw DataError("no synthetic image '" + id + "'");
    return it->second;
  };
}

SyntheticSet make_glyph_set(const GlyphSetSpec& spec) {
  if (spec.concept_glyphs.empty()) throw ConfigError("glyph set needs at least one concept");
  if (!spec.concept_names.empty() && spec.concept_names.size() != spec.concept_glyphs.size()) {
    throw ConfigError("one concept name per concept glyph");
  }
  Rng rng(derive_seed(spec.seed, "glyph-set/" + spec.id_prefix));
  SyntheticSet set;
  for (std::size_t c = 0; c < spec.concept_glyphs.size(); ++c) {
    set.table.concepts.push_back(spec.concept_names.empty() ? std::string(glyph_name(spec.concept_glyphs[c]))
                                                            : spec.concept_names[c]);
  }
  for (std::size_t i = 0; i < spec.count; ++i) {
    std::vector<std::uint8_t> labels(spec.concept_glyphs.size());
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < labels.size(); ++c)
      if (chance(rng, spec.prevalence)) present.push_back(c);
    deterministic_shuffle(present.begin(), present.end(), rng);
    if (present.size() > 4) present.resize(4);
    std::vector<Glyph> drawn;
    for (auto c : present) {
      labels[c] = 1;
      drawn.push_back(spec.concept_glyphs[c]);
    }
    for (auto d : spec.distractors)
      if (drawn.size() < 4 && chance(rng, 0.3)) drawn.push_back(d);
    const std::string id = numbered(spec.id_prefix, i);
    set.images.emplace(id, render_reverse(spec.size, drawn, rng));
    for (auto& l : labels)
      if (chance(rng, spec.label_noise)) l ^= 1;
    set.table.image_ids.push_back(id);
    set.table.labels.push_back(std::move(labels));
  }
  return set;
}

SyntheticSet overfit_set(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "overfit"));
  SyntheticSet set;
  set.table.concepts = {"bar", "ring"};
  for (std::size_t i = 0; i < 20; ++i) {
    const std::uint8_t bar = (i & 1U) != 0;
    const std::uint8_t ring = (i & 2U) != 0;
    std::vector<Glyph> drawn;
    if (bar) drawn.push_back(Glyph::Bar);
    if (ring) drawn.push_back(Glyph::Ring);
    const auto id = numbered("overfit", i);
    set.images.emplace(id, render_reverse(32, drawn, rng));
    set.table.image_ids.push_back(id);
    set.table.labels.push_back({bar, ring});
  }
  return set;
}

SyntheticSet generalization_set(std::uint64_t seed) {
  GlyphSetSpec spec;
  spec.concept_glyphs = {Glyph::Bar, Glyph::Ring, Glyph::Cross};
  spec.distractors = {Glyph::Triangle, Glyph::Square};
  spec.count = 600;
  spec.prevalence = 0.35;
  spec.label_noise = 0.10;
  spec.id_prefix = "gen";
  spec.seed = seed;
  return make_glyph_set(spec);
}

SyntheticSet pretrain_set(std::size_t count, std::uint64_t seed) {
  GlyphSetSpec spec;
  spec.concept_glyphs = all_glyphs();
  spec.count = count;
  spec.prevalence = 0.35;
  spec.id_prefix = "pre";
  spec.seed = seed;
  return make_glyph_set(spec);
}

// ---- photographs ------------------------------------------------------------------

void draw_disc(RgbImage& image, const Disc& disc, Rgb colour) {
  const long r2 = long(disc.radius) * disc.radius;
  for (int y = std::max(0, disc.cy - disc.radius); y <= std::min(image.height() - 1, disc.cy + disc.radius); ++y) {
    for (int x = std::max(0, disc.cx - disc.radius); x <= std::min(image.width() - 1, disc.cx + disc.radius); ++x) {
      const long dx = x - disc.cx;
      const long dy = y - disc.cy;
      if (dx * dx + dy * dy <= r2) image.at(x, y) = colour;
    }
  }
}

namespace {

void fill_rect(RgbImage& image, const Rect& r, Rgb colour) {
  for (int y = r.y; y < r.bottom(); ++y)
    for (int x = r.x; x < r.right(); ++x) image.at(x, y) = colour;
}

SegmenterFixture fixture(std::string name, int w, int h, Rgb bg, std::vector<std::pair<Disc, Rgb>> discs,
                         std::optional<RejectionCause> cause = std::nullopt) {
  SegmenterFixture f{std::move(name), RgbImage(w, h, bg), {}, cause};
  for (const auto& [d, c] : discs) {
    draw_disc(f.image, d, c);
    f.discs.push_back(d);
  }
  return f;
}

}  // namespace

std::vector<SegmenterFixture> segmenter_fixtures() {
  const Rgb backdrop{240, 240, 240};
  const Rgb bronze{120, 110, 90};
  const Rgb silver{150, 150, 150};
  std::vector<SegmenterFixture> out;
  out.push_back(fixture("fx-01", 200, 100, backdrop, {{{50, 50, 24}, bronze}, {{145, 50, 26}, silver}}));
  out.push_back(fixture("fx-02", 200, 100, backdrop, {{{45, 40, 22}, bronze}, {{140, 58, 25}, silver}}));

  auto specks = fixture("fx-03", 200, 100, backdrop, {{{52, 48, 23}, bronze}, {{142, 52, 24}, silver}});
  // Isolated single-pixel specks stay below the two-pixel foreground rule.
  specks.image.at(192, 30) = {0, 0, 0};
  specks.image.at(100, 12) = {0, 0, 0};
  specks.image.at(20, 85) = {0, 0, 0};
  out.push_back(std::move(specks));

  auto tall = fixture("fx-04", 230, 130, backdrop, {{{40, 65, 24}, bronze}, {{120, 65, 26}, silver}});
  fill_rect(tall.image, {170, 14, 34, 102}, {60, 60, 60});
  out.push_back(std::move(tall));

  out.push_back(fixture("fx-05", 200, 100, backdrop, {{{55, 48, 28}, bronze}, {{150, 60, 20}, silver}}));
  out.push_back(fixture("fx-06", 200, 100, {30, 40, 60}, {{{48, 50, 25}, {200, 190, 160}}, {{146, 50, 25}, {170, 170, 170}}}));

  auto marked = fixture("fx-07", 200, 100, backdrop, {{{50, 50, 25}, bronze}, {{146, 50, 25}, silver}});
  fill_rect(marked.image, {140, 38, 12, 24}, {40, 40, 40});
  fill_rect(marked.image, {44, 40, 12, 20}, {70, 60, 50});
  out.push_back(std::move(marked));

  auto corner = fixture("fx-08", 200, 100, backdrop, {{{50, 50, 24}, bronze}, {{145, 50, 24}, silver}},
                        RejectionCause::InconsistentBackground);
  fill_rect(corner.image, {180, 80, 20, 20}, {90, 90, 90});
  out.push_back(std::move(corner));

  out.push_back(fixture("fx-09", 200, 100, backdrop, {{{140, 50, 26}, silver}}, RejectionCause::NoObverse));
  out.push_back(fixture("fx-10", 240, 100, backdrop,
                        {{{40, 50, 22}, bronze}, {{110, 50, 22}, bronze}, {{185, 50, 24}, silver}},
                        RejectionCause::ExtraObjects));
  return out;
}

namespace {

const std::map<std::string, std::vector<std::string>>& concept_words() {
  static const std::map<std::string, std::vector<std::string>> words{
      {"eagle", {"eagle", "aigle", "Adler", "águila"}},
      {"horse", {"horse", "cheval", "Pferd", "caballo"}},
      {"shield", {"shield", "bouclier", "Schild", "escudo"}},
      {"cornucopia", {"cornucopia", "corne", "Füllhorn"}},
      {"patera", {"patera", "patère"}},
  };
  return words;
}

std::string word_for(const std::string& concept_name, Rng& rng) {
  const auto& table = concept_words();
  const auto it = table.find(concept_name);
  if (it == table.end()) return concept_name;
  return it->second[uniform_index(rng, it->second.size())];
}

// Synonyms no default lexicon lists, so they silently drop a true label.
std::string unlisted_synonym(const std::string& concept_name) {
  return concept_name == "horse" ? "quadriga" : "emblem";
}

RgbImage render_photo(const std::vector<Glyph>& reverse_glyphs, bool with_obverse, Rng& rng) {
  const Rgb bg{232, 228, 220};
  RgbImage photo(176, 96, bg);
  const int r = 34;
  const Disc reverse{130 + int(uniform_index(rng, 5)) - 2, 48 + int(uniform_index(rng, 5)) - 2, r};
  if (with_obverse) {
    const Disc obverse{46 + int(uniform_index(rng, 5)) - 2, 48 + int(uniform_index(rng, 5)) - 2, 33};
    draw_disc(photo, obverse, {120, 120, 120});
    for (int y = obverse.cy - 18; y <= obverse.cy + 14; ++y) {
      for (int x = obverse.cx - 12; x <= obverse.cx + 12; ++x) {
        const double ex = (x - obverse.cx) / 12.0;
        const double ey = (y - obverse.cy + 2) / 16.0;
        if (ex * ex + ey * ey <= 1.0) photo.at(x, y) = {70, 70, 70};
      }
    }
  }
  draw_disc(photo, reverse, {synthetic_disc, synthetic_disc, synthetic_disc});
  const int face = 2 * r + 2;
  const GrayImage content = render_reverse(face, reverse_glyphs, rng);
  for (int y = 0; y < face; ++y) {
    for (int x = 0; x < face; ++x) {
      const auto v = content.at(x, y);
      if (v == synthetic_background) continue;
      const int px = reverse.cx - r - 1 + x;
      const int py = reverse.cy - r - 1 + y;
      if (px >= 0 && py >= 0 && px < photo.width() && py < photo.height()) photo.at(px, py) = {v, v, v};
    }
  }
  return photo;
}

}  // namespace

CorpusTruth write_synthetic_corpus(const std::filesystem::path& dir, const CorpusSpec& spec) {
  if (spec.concept_glyphs.size() != spec.concept_names.size() || spec.concept_glyphs.empty()) {
    throw ConfigError("corpus needs one name per concept glyph");
  }
  std::filesystem::create_directories(dir);
  Rng rng(derive_seed(spec.seed, "corpus"));
  CorpusTruth truth;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::string id = numbered("coin", i);
    std::vector<std::uint8_t> labels(spec.concept_glyphs.size());
    std::vector<Glyph> drawn;
    for (std::size_t c = 0; c < labels.size() && drawn.size() < 4; ++c) {
      if (chance(rng, spec.prevalence)) {
        labels[c] = 1;
        drawn.push_back(spec.concept_glyphs[c]);
      }
    }
    const bool lone = chance(rng, spec.reject_fraction);
    write_png(dir / (id + ".png"), render_photo(drawn, !lone, rng));
    if (lone) truth.rejected.push_back(id);

    std::vector<std::string> phrases;
    std::string obverse = "laureate bust right";
    const bool noisy_text = chance(rng, spec.description_noise);
    std::vector<std::size_t> absent;
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < labels.size(); ++c) (labels[c] ? present : absent).push_back(c);
    std::optional<std::size_t> swapped;
    if (noisy_text) {
      if (!present.empty() && chance(rng, 0.5)) {
        swapped = present[uniform_index(rng, present.size())];
      } else if (!absent.empty()) {
        // Mentioned on the obverse only, so the reverse crop gets a false positive.
        obverse += " with " + word_for(spec.concept_names[absent[uniform_index(rng, absent.size())]], rng);
      }
    }
    for (auto c : present) {
      phrases.push_back(swapped == c ? unlisted_synonym(spec.concept_names[c]) : word_for(spec.concept_names[c], rng));
    }
    std::string text = "Obverse: " + obverse + ". Reverse: ";
    if (phrases.empty()) {
      text += "legend within the wreath";
    } else {
      for (std::size_t k = 0; k < phrases.size(); ++k) text += (k ? " and " : "") + phrases[k];
      text += chance(rng, 0.5) ? ", standing left" : " in the field";
    }
    text += ".\n";
    std::ofstream(dir / (id + ".txt"), std::ios::binary) << text;
    truth.labels.emplace(id, std::move(labels));
  }
  return truth;
}

}  // namespace numis
