#include "sevq/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "sevq/errors.hpp"

namespace sevq {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

struct RawGray {
  int rows = 0;
  int cols = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

RawGray read_gray(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("'" + path.string() + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  RawGray out;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> row_ptrs;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG '" + path.string() + "'");
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.rows = static_cast<int>(png_get_image_height(png, info));
  out.cols = static_cast<int>(png_get_image_width(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(out.rows));
  row_ptrs.resize(static_cast<std::size_t>(out.rows));
  for (int r = 0; r < out.rows; ++r) row_ptrs[static_cast<std::size_t>(r)] = buffer.data() + rowbytes * static_cast<std::size_t>(r);
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.samples.resize(static_cast<std::size_t>(out.rows) * static_cast<std::size_t>(out.cols));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (out.bit_depth == 16) {
      out.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
    } else {
      out.samples[i] = buffer[i];
    }
  }
  return out;
}

void write_raw(const std::filesystem::path& path, int rows, int cols, int bit_depth, int color_type,
               const std::vector<png_byte>& bytes) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(cols) * static_cast<std::size_t>(channels) *
                               static_cast<std::size_t>(bit_depth / 8);
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r)
    row_ptrs[static_cast<std::size_t>(r)] = const_cast<png_bytep>(bytes.data()) + rowbytes * static_cast<std::size_t>(r);

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageTensor read_png_image(const std::filesystem::path& path) {
  const RawGray raw = read_gray(path);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  ImageTensor img(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.samples.size(); ++i) img[i] = raw.samples[i] / scale;
  return img;
}

LungMask read_png_mask(const std::filesystem::path& path) {
  const RawGray raw = read_gray(path);
  LungMask mask(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.samples.size(); ++i) mask[i] = raw.samples[i] != 0 ? 1 : 0;
  return mask;
}

Grid<std::uint8_t> read_png_gray8(const std::filesystem::path& path) {
  const RawGray raw = read_gray(path);
  if (raw.bit_depth != 8) throw IoError("'" + path.string() + "' is not an 8-bit PNG");
  Grid<std::uint8_t> out(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.samples.size(); ++i) out[i] = static_cast<std::uint8_t>(raw.samples[i]);
  return out;
}

void write_png_gray16(const std::filesystem::path& path, const ImageTensor& image) {
  std::vector<png_byte> bytes(image.size() * 2);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    const auto s = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    bytes[2 * i] = static_cast<png_byte>(s >> 8);
    bytes[2 * i + 1] = static_cast<png_byte>(s & 0xff);
  }
  write_raw(path, image.rows(), image.cols(), 16, PNG_COLOR_TYPE_GRAY, bytes);
}

void write_png_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& image) {
  std::vector<png_byte> bytes(image.values().begin(), image.values().end());
  write_raw(path, image.rows(), image.cols(), 8, PNG_COLOR_TYPE_GRAY, bytes);
}

void write_png_mask(const std::filesystem::path& path, const LungMask& mask) {
  std::vector<png_byte> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
  write_raw(path, mask.rows(), mask.cols(), 8, PNG_COLOR_TYPE_GRAY, bytes);
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<png_byte> bytes;
  bytes.reserve(image.size() * 3);
  for (const auto& px : image.values()) bytes.insert(bytes.end(), px.begin(), px.end());
  write_raw(path, image.rows(), image.cols(), 8, PNG_COLOR_TYPE_RGB, bytes);
}

}  // namespace sevq
