#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sevq/image.hpp"
#include "sevq/severity.hpp"

namespace sevq {

struct SyntheticConfig {
  int side = 64;
  int min_blobs = 0;
  int max_blobs = 3;
  /// Blob Gaussian sigma is radius / 1.5. Must be smaller than every band height.
  double blob_radius = 3.0;
  /// Peak blob amplitude above the lung background.
  double contrast = 0.4;
  double noise_sigma = 0.02;
  /// When set, these centers are used instead of sampled ones. Centers that
  /// fall outside the mask are replaced by sampled in-mask centers.
  std::optional<std::vector<Pixel>> fixed_centers;

  void validate() const;
};

/// A generated case with an exact label: region (i, j) is 1 iff some blob
/// center falls in it.
struct SyntheticCase {
  ImageTensor image;  ///< values in [0, 1], quantized to 16-bit levels
  LungMask mask;
  SeverityArray label = SeverityArray::zeros(SeverityArray::Kind::kBinary);
  std::vector<Pixel> blob_centers;
};

/// Bit-for-bit reproducible for equal (seed, config).
SyntheticCase generate_synthetic_case(std::uint64_t seed, const SyntheticConfig& config);

/// Label from blob centers under the region partition of `mask`.
SeverityArray label_from_centers(const LungMask& mask, const std::vector<Pixel>& centers);

struct SyntheticFiles {
  std::filesystem::path image;
  std::filesystem::path mask;
  std::filesystem::path centers;
};

/// Writes `<stem>_image.png` (16-bit), `<stem>_mask.png` and `<stem>_blobs.txt`.
SyntheticFiles write_synthetic_case(const std::filesystem::path& dir, const std::string& stem,
                                    const SyntheticCase& sample);

/// Reads a blob-center sidecar file: one "row col" pair per line.
std::vector<Pixel> read_blob_centers(const std::filesystem::path& path);

}  // namespace sevq
