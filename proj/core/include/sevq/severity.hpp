#pragma once

#include <array>
#include <string>

namespace sevq {

/// Row bands of a lung, top to bottom.
enum class Band : int { kUpper = 0, kMiddle = 1, kLower = 2 };
/// Patient-right is image-left.
enum class Side : int { kPatientRight = 0, kPatientLeft = 1 };

inline constexpr int kSeverityRows = 3;
inline constexpr int kSeverityCols = 2;
inline constexpr int kNumRegions = kSeverityRows * kSeverityCols;

/// Flat region index: band * 2 + side.
constexpr int region_index(Band band, Side side) {
  return static_cast<int>(band) * kSeverityCols + static_cast<int>(side);
}

/// 3x2 severity grid. Rows are (upper, middle, lower); columns are
/// (patient-right, patient-left). Entries are stored row-major, which is
/// also the flattened label order used by manifests.
struct SeverityArray {
  enum class Kind { kBinary, kProbability };

  std::array<double, kNumRegions> values{};
  Kind kind = Kind::kProbability;

  static SeverityArray binary(const std::array<double, kNumRegions>& v);
  static SeverityArray probability(const std::array<double, kNumRegions>& v);
  static SeverityArray zeros(Kind kind) { return SeverityArray{{}, kind}; }

  double& at(int row, int col) { return values[static_cast<std::size_t>(row * kSeverityCols + col)]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row * kSeverityCols + col)]; }

  /// Throws ValidationError unless entries satisfy the kind's range.
  void validate() const;
  std::string to_string() const;

  friend bool operator==(const SeverityArray&, const SeverityArray&) = default;
};

/// Maps a Brixia 0-3 zone grid to binary presence: 0 stays 0, {1,2,3} become 1.
SeverityArray map_brixia_label(const std::array<int, kNumRegions>& brixia);

/// Sum of a binary array, in [0, 6].
int global_score(const SeverityArray& binary_array);

}  // namespace sevq
