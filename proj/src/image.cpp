#include "mosaic/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace mosaic {

RgbImage RgbImage::crop(int x0, int y0, int w, int h) const {
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    std::memcpy(out.at(0, y), at(x0, y0 + y), static_cast<std::size_t>(w) * 3);
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void write_rows(png_structp png, png_infop info, int width, int height, int color_type,
                const std::uint8_t* data, int channels) {
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
}

void write_impl(const std::filesystem::path& path, int width, int height, int color_type,
                const std::uint8_t* data, int channels) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageError(ImageErrc::OpenFailed, "cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageError(ImageErrc::EncodeFailed, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError(ImageErrc::EncodeFailed, "png encode failed: " + path.string());
  }
  png_init_io(png, file.get());
  write_rows(png, info, width, height, color_type, data, channels);
  png_destroy_write_struct(&png, &info);
}

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_impl(path, image.width, image.height, PNG_COLOR_TYPE_RGB, image.pixels.data(), 3);
}

void write_png_gray(const std::filesystem::path& path, const MaskGrid& mask) {
  MaskGrid scaled = mask * std::uint8_t{255};
  write_impl(path, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), PNG_COLOR_TYPE_GRAY,
             scaled.data(), 1);
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageError(ImageErrc::EncodeFailed, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError(ImageErrc::EncodeFailed, "png encode failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  write_rows(png, info, image.width, image.height, PNG_COLOR_TYPE_RGB, image.pixels.data(), 3);
  png_destroy_write_struct(&png, &info);
  return out;
}

RgbImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageError(ImageErrc::OpenFailed, "cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(ImageErrc::DecodeFailed, "libpng init failed");
  }
  RgbImage image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(ImageErrc::DecodeFailed, "png decode failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  image = RgbImage(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
  for (int y = 0; y < image.height; ++y) png_read_row(png, image.at(0, y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

}  // namespace mosaic
