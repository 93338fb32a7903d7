#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include "sevq/image.hpp"
#include "sevq/png_io.hpp"
#include "sevq/severity.hpp"

namespace sevq {

struct RegressionMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> cc;  ///< undefined when either series is constant
  std::optional<double> r2;  ///< undefined when the true scores are constant
};

/// MSE, MAE, Pearson correlation and R^2 = 1 - SS_res / SS_tot.
RegressionMetrics regression_metrics(std::span<const double> predicted, std::span<const double> truth);

/// Rank-based ROC AUC (Mann-Whitney, ties count one half). Undefined when only
/// one class is present.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

enum class AucMode {
  kPerRegion,  ///< AUC per array position across cases, then averaged
  kPooled,     ///< one ROC over all positions of all cases
};

struct AucResult {
  std::optional<double> mean_auc;
  std::array<std::optional<double>, kNumRegions> per_region{};
};

AucResult mean_auc(std::span<const SeverityArray> predicted, std::span<const SeverityArray> truth,
                   AucMode mode = AucMode::kPerRegion);

struct GlobalScore {
  int integer = 0;    ///< entries >= threshold
  double real = 0.0;  ///< sum of probabilities
};

GlobalScore predicted_global_score(const SeverityArray& array, double threshold = 0.5);

struct Overlay {
  RgbImage image;
  LungMask lesion;   ///< map >= threshold
  LungMask contour;  ///< lesion pixels with a 4-neighbour outside the lesion or on the border
};

/// Draws the thresholded lesion contour in yellow over a gray rendering of
/// `image` (min-max scaled).
Overlay export_overlay(const ProbabilityMap& map, const ImageTensor& image, double threshold = 0.5);

/// 8-bit rendering of a probability map (0 -> 0, 1 -> 255).
Grid<std::uint8_t> map_to_gray8(const ProbabilityMap& map);

struct EvaluationReport {
  std::size_t n_cases = 0;
  RegressionMetrics real_score;     ///< regression on sum-of-probability scores
  RegressionMetrics integer_score;  ///< regression on thresholded counts
  AucResult auc;                    ///< per-region mode
  AucResult pooled_auc;
  double threshold = 0.5;

  /// "key: value" lines.
  std::string to_text() const;
  /// Header plus one row of values.
  std::string to_csv() const;
};

EvaluationReport evaluate(std::span<const SeverityArray> predicted, std::span<const SeverityArray> truth,
                          double threshold = 0.5);

}  // namespace sevq
