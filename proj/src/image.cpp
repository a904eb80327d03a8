#include "numis/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include "numis/errors.hpp"

namespace numis {

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height), pixels_(std::size_t(width) * height, fill) {
  if (width <= 0 || height <= 0) throw ShapeError("image extents must be positive");
}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0 || pixels_.size() != std::size_t(width) * height) {
    throw ShapeError("image pixel count does not match extents");
  }
}

GrayImage GrayImage::crop(const Rect& box) const {
  if (box.x < 0 || box.y < 0 || box.width <= 0 || box.height <= 0 || box.right() > width_ ||
      box.bottom() > height_) {
    throw ShapeError("crop box outside image");
  }
  GrayImage out(box.width, box.height);
  for (int y = 0; y < box.height; ++y)
    for (int x = 0; x < box.width; ++x) out.at(x, y) = at(box.x + x, box.y + y);
  return out;
}

RgbImage::RgbImage(int width, int height, Rgb fill)
    : width_(width), height_(height), pixels_(std::size_t(width) * height, fill) {
  if (width <= 0 || height <= 0) throw ShapeError("image extents must be positive");
}

RgbImage RgbImage::crop(const Rect& box) const {
  if (box.x < 0 || box.y < 0 || box.width <= 0 || box.height <= 0 || box.right() > width_ ||
      box.bottom() > height_) {
    throw ShapeError("crop box outside image");
  }
  RgbImage out(box.width, box.height);
  for (int y = 0; y < box.height; ++y)
    for (int x = 0; x < box.width; ++x) out.at(x, y) = at(box.x + x, box.y + y);
  return out;
}

std::uint8_t luma(Rgb c) {
  const double v = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

GrayImage to_gray(const RgbImage& image) {
  std::vector<std::uint8_t> px(image.pixels().size());
  std::transform(image.pixels().begin(), image.pixels().end(), px.begin(), luma);
  return GrayImage(image.width(), image.height(), std::move(px));
}

// ---- codecs ------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DataError("invalid PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  RgbImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < out.pixels().size(); ++i) {
    out.at(int(i % img.width), int(i / img.width)) = {buffer[3 * i], buffer[3 * i + 1],
                                                      buffer[3 * i + 2]};
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

RgbImage decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buffer;
  unsigned width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("cannot decode JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = cinfo.output_width;
  height = cinfo.output_height;
  buffer.resize(std::size_t(width) * height * 3);
  while (cinfo.output_scanline < height) {
    JSAMPROW row = buffer.data() + std::size_t(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  RgbImage out(static_cast<int>(width), static_cast<int>(height));
  for (std::size_t i = 0; i < std::size_t(width) * height; ++i) {
    out.at(int(i % width), int(i / width)) = {buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]};
  }
  return out;
}

std::vector<std::uint8_t> encode(const std::uint8_t* pixels, int width, int height, bool rgb) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw DataError(std::string("PNG size query failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, path);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes, path);
  }
  throw DataError("unsupported image format: " + path.string());
}

GrayImage read_gray(const std::filesystem::path& path) { return to_gray(read_rgb(path)); }

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  write_bytes(path, encode(image.pixels().data(), image.width(), image.height(), false));
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  static_assert(sizeof(Rgb) == 3);
  return encode(reinterpret_cast<const std::uint8_t*>(image.pixels().data()), image.width(),
                image.height(), true);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_bytes(path, encode_png(image));
}

GrayImage resize_bilinear(const GrayImage& image, int width, int height) {
  if (width <= 0 || height <= 0) throw ShapeError("resize target must be positive");
  if (image.width() == width && image.height() == height) return image;
  GrayImage out(width, height);
  const double sx = double(image.width()) / width;
  const double sy = double(image.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(image.height() - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(image.width() - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      const double top = image.at(x0, y0) * (1 - wx) + image.at(x1, y0) * wx;
      const double bottom = image.at(x0, y1) * (1 - wx) + image.at(x1, y1) * wx;
      out.at(x, y) = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bottom * wy));
    }
  }
  return out;
}

Tensor to_tensor(const GrayImage& image) {
  std::vector<float> values(image.pixels().size());
  std::transform(image.pixels().begin(), image.pixels().end(), values.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0F; });
  return Tensor({std::size_t(image.height()), std::size_t(image.width())}, std::move(values));
}

GrayImage from_tensor(const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("from_tensor expects [H, W], got " + shape_string(image.shape()));
  std::vector<std::uint8_t> px(image.numel());
  const auto v = image.data();
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v[i] * 255.0F), 0L, 255L));
  return GrayImage(int(image.dim(1)), int(image.dim(0)), std::move(px));
}

}  // namespace numis
