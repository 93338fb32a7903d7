#pragma once

#include <cstdint>

#include "sevq/image.hpp"

namespace sevq {

struct PreprocessConfig {
  int target_side = 256;
  int blur_kernel = 3;  ///< odd; sigma = blur_kernel / 6
  bool standardize = true;

  void validate() const;
  std::uint64_t hash() const;
  friend bool operator==(const PreprocessConfig&, const PreprocessConfig&) = default;
};

struct PreprocessedImage {
  ImageTensor pixels;
  int original_rows = 0;
  int original_cols = 0;
  std::uint64_t config_hash = 0;
};

/// resize -> Gaussian blur -> histogram equalization -> standardization.
PreprocessedImage preprocess(const ImageTensor& image, const PreprocessConfig& config);

/// Bilinear resampling with half-pixel centers; identity at equal size.
ImageTensor resize_bilinear(const ImageTensor& image, int rows, int cols);

/// Separable Gaussian blur, sigma = kernel / 6, half-sample symmetric borders.
ImageTensor gaussian_blur(const ImageTensor& image, int kernel);

/// 256-bin cumulative-histogram equalization onto [0, 1]. Constant images are
/// returned unchanged.
ImageTensor equalize_histogram(const ImageTensor& image);

/// Zero mean, unit (population) standard deviation. Constant images map to 0.
ImageTensor standardize(const ImageTensor& image);

/// Nearest-neighbour resampling of a binary mask to target_side x target_side.
LungMask resize_mask(const LungMask& mask, int target_side);

}  // namespace sevq
