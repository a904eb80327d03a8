#pragma once

// Locates the reverse side of a coin in a two-sided auction photograph.
//
// The photograph is expected to show a uniform background with exactly two
// coin faces side by side: obverse on the left, reverse on the right. Each
// search scans columns leftwards and rows upwards for runs of non-background
// pixels; anything that breaks that layout rejects the image with a cause.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "numis/image.hpp"

namespace numis {

struct SegmentationParams {
  int corner_patch = 8;
  int corner_agreement_threshold = 12;
  int background_tolerance = 20;
  int min_object_extent = 32;
  double squareness_tolerance = 0.35;
  double background_fill_ratio = 0.45;
  // A row/column counts as foreground once it holds this many non-background pixels.
  int min_foreground_pixels = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const SegmentationParams& p);
void from_json(const nlohmann::json& j, SegmentationParams& p);

enum class RejectionCause {
  ImageTooSmall,
  InconsistentBackground,
  NoObject,
  TouchesEdge,
  ExtraObjectAbove,
  NoObverse,
  ExtraObjects,
  Unreadable,
};

std::string_view to_string(RejectionCause cause);
std::optional<RejectionCause> rejection_cause_from_string(std::string_view name);

struct Accepted {
  Rect reverse_box;
  Rect obverse_box;
  GrayImage crop;
};

struct Rejected {
  RejectionCause cause;
};

using SegmentationOutcome = std::variant<Accepted, Rejected>;

// Per-channel maximum absolute difference.
int colour_distance(Rgb a, Rgb b);

// Mean of the four corner-patch means, or InconsistentBackground when any two
// corner means are further apart than the agreement threshold.
std::variant<std::array<double, 3>, Rejected> estimate_background_mean(const RgbImage& image,
                                                                       const SegmentationParams& params);
// The same, rounded to the nearest colour.
std::variant<Rgb, Rejected> estimate_background(const RgbImage& image, const SegmentationParams& params);

enum class BoxFailure { NoObject, TouchesEdge };

// Searches columns [0, right_limit) from right to left for the bottom-rightmost
// object at least min_object_extent wide and tall.
std::variant<Rect, BoxFailure> find_object_box(const RgbImage& image, Rgb background,
                                               const SegmentationParams& params, int right_limit);

double background_fraction(const RgbImage& image, Rgb background, const SegmentationParams& params,
                           const Rect& box);

SegmentationOutcome segment(const RgbImage& image, const SegmentationParams& params);

struct CorpusReport {
  std::size_t total = 0;
  std::size_t accepted = 0;
  std::map<std::string, std::size_t> rejections;    // cause -> count
  std::vector<std::string> accepted_ids;           // source stems, sorted
  std::map<std::string, std::string> rejected_ids;  // stem -> cause
  std::map<std::string, Rect> reverse_boxes;        // stem -> box

  double rejection_rate() const { return total == 0 ? 0.0 : double(total - accepted) / double(total); }
  nlohmann::json to_json() const;
  static CorpusReport from_json(const nlohmann::json& j);
};

// Images are *.png / *.jpg / *.jpeg directly under input_dir; crops are written
// as <stem>-rev.png. Unreadable images are counted, never fatal.
CorpusReport process_corpus(const std::filesystem::path& input_dir,
                            const std::filesystem::path& output_dir, const SegmentationParams& params);

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace numis
