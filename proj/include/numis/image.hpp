#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "numis/tensor.hpp"

namespace numis {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Axis-aligned pixel rectangle; x/y are the top-left corner, extents exclusive.
struct Rect {
  int x = 0, y = 0, width = 0, height = 0;
  int right() const { return x + width; }
  int bottom() const { return y + height; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 0);
  GrayImage(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }
  std::uint8_t at(int x, int y) const { return pixels_[std::size_t(y) * width_ + x]; }
  std::uint8_t& at(int x, int y) { return pixels_[std::size_t(y) * width_ + x]; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

  GrayImage crop(const Rect& box) const;
  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_ = 0, height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb at(int x, int y) const { return pixels_[std::size_t(y) * width_ + x]; }
  Rgb& at(int x, int y) { return pixels_[std::size_t(y) * width_ + x]; }
  const std::vector<Rgb>& pixels() const { return pixels_; }

  RgbImage crop(const Rect& box) const;
  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_ = 0, height_ = 0;
  std::vector<Rgb> pixels_;
};

// Luma 0.299/0.587/0.114, rounded to nearest.
std::uint8_t luma(Rgb c);
GrayImage to_gray(const RgbImage& image);

// PNG or JPEG, chosen by file signature. Throws DataError on failure.
RgbImage read_rgb(const std::filesystem::path& path);
GrayImage read_gray(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);
// Encoded PNG bytes, same encoder settings as write_png.
std::vector<std::uint8_t> encode_png(const RgbImage& image);

GrayImage resize_bilinear(const GrayImage& image, int width, int height);

// [H, W] tensor with values in [0, 1].
Tensor to_tensor(const GrayImage& image);
GrayImage from_tensor(const Tensor& image);

}  // namespace numis
