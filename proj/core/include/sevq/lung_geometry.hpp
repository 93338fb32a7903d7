#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "sevq/image.hpp"
#include "sevq/severity.hpp"

namespace sevq {

/// One 4-connected component of a binary mask.
struct Component {
  int label = 0;  ///< 1-based label in the label grid
  std::size_t area = 0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
};

struct ComponentLabeling {
  Grid<int> labels;  ///< 0 = background, else Component::label
  std::vector<Component> components;  ///< largest area first
};

/// 4-connectivity labeling. Ties in area keep raster order of first pixel.
/// Throws GeometryError on an empty mask.
ComponentLabeling connected_components(const LungMask& mask);

struct LungSplit {
  LungMask right;  ///< patient-right lung (image-left)
  LungMask left;   ///< patient-left lung (image-right)
  /// Set when the mask had a single component and was split at the median
  /// occupied column.
  bool median_fallback = false;
};

LungSplit split_left_right(const LungMask& mask);

struct SplitRows {
  int top = 0;     ///< first occupied row
  int bottom = 0;  ///< last occupied row
  int r1 = 0;      ///< first row of the middle band
  int r2 = 0;      ///< first row of the lower band
  friend bool operator==(const SplitRows&, const SplitRows&) = default;
};

/// Band boundaries at 5/12 and 2/3 of the occupied row extent, floored.
SplitRows split_rows_for_extent(int top, int bottom);
SplitRows compute_split_rows(const LungMask& mask);

Band band_for_row(const SplitRows& rows, int row);

enum class SplitMode {
  kGlobal,   ///< one pair of split rows from the whole mask extent
  kPerLung,  ///< each lung split by its own extent
};

/// Per-pixel region map: values 0..5 (band * 2 + side) or kBackground.
class RegionPartition {
 public:
  static constexpr std::uint8_t kBackground = 255;

  RegionPartition() = default;
  RegionPartition(Grid<std::uint8_t> index, SplitRows rows_right, SplitRows rows_left, bool median_fallback);

  /// Partition with no lung pixels; every region is empty.
  static RegionPartition background(int rows, int cols);

  const Grid<std::uint8_t>& index() const noexcept { return index_; }
  std::uint8_t at(int r, int c) const noexcept { return index_(r, c); }
  int rows() const noexcept { return index_.rows(); }
  int cols() const noexcept { return index_.cols(); }
  /// Split rows used for each side; identical in global mode.
  const SplitRows& split_rows(Side side) const noexcept {
    return side == Side::kPatientRight ? rows_right_ : rows_left_;
  }
  bool median_fallback() const noexcept { return median_fallback_; }
  std::array<std::size_t, kNumRegions> region_areas() const;

 private:
  Grid<std::uint8_t> index_;
  SplitRows rows_right_;
  SplitRows rows_left_;
  bool median_fallback_ = false;
};

RegionPartition build_region_partition(const LungMask& mask, SplitMode mode = SplitMode::kGlobal);

struct PooledArray {
  SeverityArray array = SeverityArray::zeros(SeverityArray::Kind::kProbability);
  /// Flat pixel index of the first (row-major) maximizer, -1 for empty regions.
  std::array<std::ptrdiff_t, kNumRegions> argmax{};
  std::array<bool, kNumRegions> empty{};
};

/// Max of the map over each region. Empty regions pool to 0 and are flagged.
PooledArray roi_max_pool(const ProbabilityMap& map, const RegionPartition& partition);

/// Scatters upstream gradients of the pooled entries onto the arg-max pixels.
ProbabilityMap roi_max_pool_backward(const PooledArray& pooled, const std::array<double, kNumRegions>& grad,
                                     int rows, int cols);

}  // namespace sevq
