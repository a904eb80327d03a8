#include "numis/segmenter.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>

#include "numis/errors.hpp"

namespace numis {

void SegmentationParams::validate() const {
  if (corner_patch <= 0 || corner_agreement_threshold < 0 || background_tolerance < 0 ||
      min_object_extent <= 0 || min_foreground_pixels <= 0) {
    throw ConfigError("segmentation thresholds must be nonnegative (sizes positive)");
  }
  if (!(squareness_tolerance > 0.0 && squareness_tolerance < 1.0)) {
    throw ConfigError("squareness_tolerance must lie in (0, 1)");
  }
  if (background_fill_ratio < 0.0 || background_fill_ratio > 1.0) {
    throw ConfigError("background_fill_ratio must lie in [0, 1]");
  }
}

void to_json(nlohmann::json& j, const SegmentationParams& p) {
  j = {{"corner_patch", p.corner_patch},
       {"corner_agreement_threshold", p.corner_agreement_threshold},
       {"background_tolerance", p.background_tolerance},
       {"min_object_extent", p.min_object_extent},
       {"squareness_tolerance", p.squareness_tolerance},
       {"background_fill_ratio", p.background_fill_ratio},
       {"min_foreground_pixels", p.min_foreground_pixels}};
}

void from_json(const nlohmann::json& j, SegmentationParams& p) {
  SegmentationParams d;
  p.corner_patch = j.value("corner_patch", d.corner_patch);
  p.corner_agreement_threshold = j.value("corner_agreement_threshold", d.corner_agreement_threshold);
  p.background_tolerance = j.value("background_tolerance", d.background_tolerance);
  p.min_object_extent = j.value("min_object_extent", d.min_object_extent);
  p.squareness_tolerance = j.value("squareness_tolerance", d.squareness_tolerance);
  p.background_fill_ratio = j.value("background_fill_ratio", d.background_fill_ratio);
  p.min_foreground_pixels = j.value("min_foreground_pixels", d.min_foreground_pixels);
}

namespace {

constexpr std::array<std::pair<RejectionCause, std::string_view>, 8> kCauseNames{{
    {RejectionCause::ImageTooSmall, "image_too_small"},
    {RejectionCause::InconsistentBackground, "inconsistent_background"},
    {RejectionCause::NoObject, "no_object"},
    {RejectionCause::TouchesEdge, "touches_edge"},
    {RejectionCause::ExtraObjectAbove, "extra_object_above"},
    {RejectionCause::NoObverse, "no_obverse"},
    {RejectionCause::ExtraObjects, "extra_objects"},
    {RejectionCause::Unreadable, "unreadable"},
}};

}  // namespace

std::string_view to_string(RejectionCause cause) {
  for (const auto& [c, name] : kCauseNames)
    if (c == cause) return name;
  return "unknown";
}

std::optional<RejectionCause> rejection_cause_from_string(std::string_view name) {
  for (const auto& [c, n] : kCauseNames)
    if (n == name) return c;
  return std::nullopt;
}

int colour_distance(Rgb a, Rgb b) {
  return std::max({std::abs(int(a.r) - int(b.r)), std::abs(int(a.g) - int(b.g)),
                   std::abs(int(a.b) - int(b.b))});
}

std::variant<std::array<double, 3>, Rejected> estimate_background_mean(const RgbImage& image,
                                                                       const SegmentationParams& params) {
  const int p = params.corner_patch;
  if (image.width() < 2 * p || image.height() < 2 * p) {
    return Rejected{RejectionCause::ImageTooSmall};
  }
  const std::array<std::pair<int, int>, 4> origins{
      {{0, 0}, {image.width() - p, 0}, {0, image.height() - p}, {image.width() - p, image.height() - p}}};
  std::array<std::array<double, 3>, 4> means{};
  for (std::size_t c = 0; c < 4; ++c) {
    std::array<double, 3> acc{};
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) {
        const Rgb px = image.at(origins[c].first + x, origins[c].second + y);
        acc[0] += px.r;
        acc[1] += px.g;
        acc[2] += px.b;
      }
    for (auto& v : acc) v /= double(p * p);
    means[c] = acc;
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b)
      for (std::size_t ch = 0; ch < 3; ++ch)
        if (std::abs(means[a][ch] - means[b][ch]) > params.corner_agreement_threshold) {
          return Rejected{RejectionCause::InconsistentBackground};
        }
  std::array<double, 3> out{};
  for (std::size_t ch = 0; ch < 3; ++ch) out[ch] = (means[0][ch] + means[1][ch] + means[2][ch] + means[3][ch]) / 4.0;
  return out;
}

std::variant<Rgb, Rejected> estimate_background(const RgbImage& image, const SegmentationParams& params) {
  const auto mean = estimate_background_mean(image, params);
  if (const auto* r = std::get_if<Rejected>(&mean)) return *r;
  std::array<std::uint8_t, 3> out{};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    out[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(std::get<0>(mean)[ch]), 0L, 255L));
  }
  return Rgb{out[0], out[1], out[2]};
}

namespace {

// Foreground mask plus the scans shared by every search.
class Scanner {
 public:
  Scanner(const RgbImage& image, Rgb background, const SegmentationParams& params)
      : width_(image.width()), height_(image.height()), params_(params),
        foreground_(std::size_t(width_) * height_) {
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        foreground_[std::size_t(y) * width_ + x] =
            colour_distance(image.at(x, y), background) > params.background_tolerance;
  }

  int width() const { return width_; }

  bool column_is_background(int x) const {
    int n = 0;
    for (int y = 0; y < height_; ++y) n += foreground_[std::size_t(y) * width_ + x];
    return n < params_.min_foreground_pixels;
  }

  bool row_is_background(int y, int left, int right) const {
    int n = 0;
    for (int x = left; x < right; ++x) n += foreground_[std::size_t(y) * width_ + x];
    return n < params_.min_foreground_pixels;
  }

  // Scans rows upward from `start_row` inside columns [left, right) for a
  // foreground run at least min_object_extent tall. Returns {top, bottom+1}.
  std::variant<std::pair<int, int>, BoxFailure> find_rows(int left, int right, int start_row) const {
    int row = start_row;
    while (true) {
      while (row >= 0 && row_is_background(row, left, right)) --row;
      if (row < 0) return BoxFailure::NoObject;
      const int bottom = row;
      if (bottom == height_ - 1) return BoxFailure::TouchesEdge;
      int r = bottom - 1;
      while (r >= 0 && !row_is_background(r, left, right)) --r;
      if (r < 0) return BoxFailure::TouchesEdge;
      const int top = r + 1;
      if (bottom - top + 1 >= params_.min_object_extent) return std::pair{top, bottom + 1};
      row = r;
    }
  }

  std::variant<Rect, BoxFailure> find_box(int right_limit) const {
    int col = std::min(right_limit, width_) - 1;
    while (true) {
      while (col >= 0 && column_is_background(col)) --col;
      if (col < 0) return BoxFailure::NoObject;
      const int right = col;
      if (right == width_ - 1) return BoxFailure::TouchesEdge;
      int c = right - 1;
      while (c >= 0 && !column_is_background(c)) --c;
      if (c < 0) return BoxFailure::TouchesEdge;
      const int left = c + 1;
      col = c;
      if (right - left + 1 < params_.min_object_extent) continue;
      const auto rows = find_rows(left, right + 1, height_ - 1);
      if (const auto* f = std::get_if<BoxFailure>(&rows)) {
        if (*f == BoxFailure::TouchesEdge) return BoxFailure::TouchesEdge;
        continue;
      }
      const auto [top, bottom] = std::get<std::pair<int, int>>(rows);
      return Rect{left, top, right - left + 1, bottom - top};
    }
  }

  double background_fraction(const Rect& box) const {
    std::size_t bg = 0;
    for (int y = box.y; y < box.bottom(); ++y)
      for (int x = box.x; x < box.right(); ++x) bg += foreground_[std::size_t(y) * width_ + x] ? 0 : 1;
    return double(bg) / double(std::size_t(box.width) * box.height);
  }

  bool plausible_coin(const Rect& box) const {
    const double skew = double(std::abs(box.width - box.height)) / double(std::max(box.width, box.height));
    return skew <= params_.squareness_tolerance &&
           background_fraction(box) <= params_.background_fill_ratio;
  }

  // Full per-face search: box search, shape re-search, nothing-above check.
  std::variant<Rect, RejectionCause> locate_face(int right_limit) const {
    int limit = right_limit;
    while (true) {
      const auto found = find_box(limit);
      if (const auto* f = std::get_if<BoxFailure>(&found)) {
        return *f == BoxFailure::NoObject ? RejectionCause::NoObject : RejectionCause::TouchesEdge;
      }
      const Rect box = std::get<Rect>(found);
      if (!plausible_coin(box)) {
        limit = box.x;
        continue;
      }
      if (box.y > 0) {
        const auto above = find_rows(box.x, box.right(), box.y - 1);
        if (!std::holds_alternative<BoxFailure>(above) ||
            std::get<BoxFailure>(above) != BoxFailure::NoObject) {
          return RejectionCause::ExtraObjectAbove;
        }
      }
      return box;
    }
  }

 private:
  int width_, height_;
  const SegmentationParams& params_;
  std::vector<std::uint8_t> foreground_;
};

}  // namespace

std::variant<Rect, BoxFailure> find_object_box(const RgbImage& image, Rgb background,
                                               const SegmentationParams& params, int right_limit) {
  if (right_limit < 0 || right_limit > image.width()) {
    throw ShapeError("right_limit " + std::to_string(right_limit) + " outside image");
  }
  return Scanner(image, background, params).find_box(right_limit);
}

double background_fraction(const RgbImage& image, Rgb background, const SegmentationParams& params,
                           const Rect& box) {
  return Scanner(image, background, params).background_fraction(box);
}

SegmentationOutcome segment(const RgbImage& image, const SegmentationParams& params) {
  params.validate();
  const auto bg = estimate_background(image, params);
  if (const auto* r = std::get_if<Rejected>(&bg)) return *r;
  const Scanner scan(image, std::get<Rgb>(bg), params);

  const auto reverse = scan.locate_face(image.width());
  if (const auto* c = std::get_if<RejectionCause>(&reverse)) return Rejected{*c};
  const Rect reverse_box = std::get<Rect>(reverse);

  const auto obverse = scan.locate_face(reverse_box.x);
  if (const auto* c = std::get_if<RejectionCause>(&obverse)) {
    return Rejected{*c == RejectionCause::NoObject ? RejectionCause::NoObverse : *c};
  }
  const Rect obverse_box = std::get<Rect>(obverse);

  const auto extra = scan.find_box(obverse_box.x);
  if (!std::holds_alternative<BoxFailure>(extra) ||
      std::get<BoxFailure>(extra) != BoxFailure::NoObject) {
    return Rejected{RejectionCause::ExtraObjects};
  }
  return Accepted{reverse_box, obverse_box, to_gray(image.crop(reverse_box))};
}

// ---- corpus ----------------------------------------------------------------------

nlohmann::json CorpusReport::to_json() const {
  nlohmann::json boxes = nlohmann::json::object();
  for (const auto& [id, b] : reverse_boxes) boxes[id] = {b.x, b.y, b.width, b.height};
  return {{"total", total},
          {"accepted", accepted},
          {"rejection_rate", rejection_rate()},
          {"rejections", rejections},
          {"accepted_ids", accepted_ids},
          {"rejected_ids", rejected_ids},
          {"reverse_boxes", boxes}};
}

CorpusReport CorpusReport::from_json(const nlohmann::json& j) {
  CorpusReport r;
  r.total = j.at("total").get<std::size_t>();
  r.accepted = j.at("accepted").get<std::size_t>();
  r.rejections = j.at("rejections").get<std::map<std::string, std::size_t>>();
  r.accepted_ids = j.at("accepted_ids").get<std::vector<std::string>>();
  r.rejected_ids = j.at("rejected_ids").get<std::map<std::string, std::string>>();
  for (const auto& [id, b] : j.at("reverse_boxes").items()) {
    r.reverse_boxes[id] = Rect{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
  }
  return r;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

CorpusReport process_corpus(const std::filesystem::path& input_dir,
                            const std::filesystem::path& output_dir, const SegmentationParams& params) {
  params.validate();
  std::filesystem::create_directories(output_dir);
  CorpusReport report;
  for (const auto& [cause, name] : kCauseNames) report.rejections[std::string(name)] = 0;
  for (const auto& path : list_images(input_dir)) {
    const std::string stem = path.stem().string();
    ++report.total;
    SegmentationOutcome outcome = Rejected{RejectionCause::Unreadable};
    try {
      outcome = segment(read_rgb(path), params);
    } catch (const DataError& e) {
      spdlog::warn("skipping unreadable image {}: {}", path.string(), e.what());
    } catch (const ShapeError& e) {
      spdlog::warn("skipping unreadable image {}: {}", path.string(), e.what());
    }
    if (const auto* ok = std::get_if<Accepted>(&outcome)) {
      ++report.accepted;
      report.accepted_ids.push_back(stem);
      report.reverse_boxes[stem] = ok->reverse_box;
      write_png(output_dir / (stem + "-rev.png"), ok->crop);
    } else {
      const auto cause = std::string(to_string(std::get<Rejected>(outcome).cause));
      ++report.rejections[cause];
      report.rejected_ids[stem] = cause;
    }
  }
  std::sort(report.accepted_ids.begin(), report.accepted_ids.end());
  return report;
}

}  // namespace numis
