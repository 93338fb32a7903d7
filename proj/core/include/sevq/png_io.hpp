#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "sevq/image.hpp"

namespace sevq {

using RgbImage = Grid<std::array<std::uint8_t, 3>>;

/// Reads an 8- or 16-bit PNG as grayscale scaled to [0, 1]. Color inputs are
/// converted to luminance; alpha is dropped.
ImageTensor read_png_image(const std::filesystem::path& path);

/// Reads a PNG mask; any nonzero sample becomes 1.
LungMask read_png_mask(const std::filesystem::path& path);

/// Reads raw 8-bit samples without rescaling (indexed region maps, masks).
Grid<std::uint8_t> read_png_gray8(const std::filesystem::path& path);

/// Writes values in [0, 1] (clamped) as 16-bit grayscale.
void write_png_gray16(const std::filesystem::path& path, const ImageTensor& image);
void write_png_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& image);
void write_png_mask(const std::filesystem::path& path, const LungMask& mask);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

}  // namespace sevq
