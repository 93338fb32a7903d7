#include "sevq/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "sevq/errors.hpp"

namespace sevq {

RegressionMetrics regression_metrics(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw ValidationError("regression_metrics: length mismatch");
  if (predicted.size() < 2) throw ValidationError("regression_metrics: need at least two cases");
  const auto n = static_cast<double>(predicted.size());
  RegressionMetrics m;
  double mean_p = 0.0;
  double mean_t = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double r = predicted[i] - truth[i];
    m.mse += r * r;
    m.mae += std::abs(r);
    mean_p += predicted[i];
    mean_t += truth[i];
  }
  m.mse /= n;
  m.mae /= n;
  mean_p /= n;
  mean_t /= n;

  double spp = 0.0;
  double stt = 0.0;
  double spt = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dp = predicted[i] - mean_p;
    const double dt = truth[i] - mean_t;
    spp += dp * dp;
    stt += dt * dt;
    spt += dp * dt;
  }
  if (stt > 0.0) {
    m.r2 = 1.0 - m.mse * n / stt;
    if (spp > 0.0) m.cc = std::clamp(spt / std::sqrt(spp * stt), -1.0, 1.0);
  }
  return m;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("roc_auc: length mismatch");
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("roc_auc: labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based mid-ranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += mid_rank;
    i = j;
  }
  const auto p = static_cast<double>(positives);
  const auto q = static_cast<double>(negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

AucResult mean_auc(std::span<const SeverityArray> predicted, std::span<const SeverityArray> truth, AucMode mode) {
  if (predicted.size() != truth.size()) throw ValidationError("mean_auc: length mismatch");
  if (predicted.empty()) throw ValidationError("mean_auc: need at least one case");
  for (const auto& t : truth)
    if (t.kind != SeverityArray::Kind::kBinary) throw ValidationError("mean_auc: truth arrays must be binary");

  AucResult out;
  if (mode == AucMode::kPooled) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t c = 0; c < predicted.size(); ++c)
      for (std::size_t k = 0; k < kNumRegions; ++k) {
        scores.push_back(predicted[c].values[k]);
        labels.push_back(static_cast<int>(truth[c].values[k]));
      }
    out.mean_auc = roc_auc(scores, labels);
    return out;
  }

  double sum = 0.0;
  int defined = 0;
  std::vector<double> scores(predicted.size());
  std::vector<int> labels(predicted.size());
  for (std::size_t k = 0; k < kNumRegions; ++k) {
    for (std::size_t c = 0; c < predicted.size(); ++c) {
      scores[c] = predicted[c].values[k];
      labels[c] = static_cast<int>(truth[c].values[k]);
    }
    out.per_region[k] = roc_auc(scores, labels);
    if (out.per_region[k]) {
      sum += *out.per_region[k];
      ++defined;
    }
  }
  if (defined > 0) out.mean_auc = sum / defined;
  return out;
}

GlobalScore predicted_global_score(const SeverityArray& array, double threshold) {
  GlobalScore s;
  for (double v : array.values) {
    s.integer += v >= threshold ? 1 : 0;
    s.real += v;
  }
  return s;
}

Overlay export_overlay(const ProbabilityMap& map, const ImageTensor& image, double threshold) {
  if (!map.same_shape(image)) throw ValidationError("export_overlay: map and image sizes differ");
  Overlay out{RgbImage(map.rows(), map.cols()), LungMask(map.rows(), map.cols()), LungMask(map.rows(), map.cols())};
  for (std::size_t i = 0; i < map.size(); ++i) out.lesion[i] = map[i] >= threshold ? 1 : 0;

  for (int r = 0; r < map.rows(); ++r)
    for (int c = 0; c < map.cols(); ++c) {
      if (!out.lesion(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r == map.rows() - 1 || c == map.cols() - 1 || !out.lesion(r - 1, c) ||
                        !out.lesion(r + 1, c) || !out.lesion(r, c - 1) || !out.lesion(r, c + 1);
      out.contour(r, c) = edge ? 1 : 0;
    }

  double lo = 0.0;
  double hi = 0.0;
  if (!image.empty()) {
    const auto [a, b] = std::minmax_element(image.values().begin(), image.values().end());
    lo = *a;
    hi = *b;
  }
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (out.contour[i]) {
      out.image[i] = {255, 255, 0};
    } else {
      const auto g = static_cast<std::uint8_t>(std::lround((image[i] - lo) * scale));
      out.image[i] = {g, g, g};
    }
  }
  return out;
}

Grid<std::uint8_t> map_to_gray8(const ProbabilityMap& map) {
  Grid<std::uint8_t> out(map.rows(), map.cols());
  for (std::size_t i = 0; i < map.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map[i], 0.0, 1.0) * 255.0));
  return out;
}

EvaluationReport evaluate(std::span<const SeverityArray> predicted, std::span<const SeverityArray> truth,
                          double threshold) {
  if (predicted.size() != truth.size()) throw ValidationError("evaluate: length mismatch");
  EvaluationReport report;
  report.n_cases = predicted.size();
  report.threshold = threshold;
  std::vector<double> real;
  std::vector<double> integer;
  std::vector<double> true_scores;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const GlobalScore s = predicted_global_score(predicted[i], threshold);
    real.push_back(s.real);
    integer.push_back(s.integer);
    true_scores.push_back(global_score(truth[i]));
  }
  report.real_score = regression_metrics(real, true_scores);
  report.integer_score = regression_metrics(integer, true_scores);
  report.auc = mean_auc(predicted, truth, AucMode::kPerRegion);
  report.pooled_auc = mean_auc(predicted, truth, AucMode::kPooled);
  return report;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os.precision(6);
  os << *v;
  return os.str();
}

std::string fmt(double v) { return fmt(std::optional<double>(v)); }

const char* kRegionNames[kNumRegions] = {"upper_right", "upper_left", "middle_right",
                                         "middle_left", "lower_right", "lower_left"};

}  // namespace

std::string EvaluationReport::to_text() const {
  std::ostringstream os;
  os << "n_cases: " << n_cases << '\n'
     << "threshold: " << fmt(threshold) << '\n'
     << "mse: " << fmt(real_score.mse) << '\n'
     << "mae: " << fmt(real_score.mae) << '\n'
     << "cc: " << fmt(real_score.cc) << '\n'
     << "r2: " << fmt(real_score.r2) << '\n'
     << "mean_auc: " << fmt(auc.mean_auc) << '\n';
  for (std::size_t k = 0; k < kNumRegions; ++k) os << "auc_" << kRegionNames[k] << ": " << fmt(auc.per_region[k]) << '\n';
  os << "pooled_auc: " << fmt(pooled_auc.mean_auc) << '\n'
     << "integer_mse: " << fmt(integer_score.mse) << '\n'
     << "integer_mae: " << fmt(integer_score.mae) << '\n'
     << "integer_cc: " << fmt(integer_score.cc) << '\n'
     << "integer_r2: " << fmt(integer_score.r2) << '\n';
  return os.str();
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream header;
  std::ostringstream row;
  auto add = [&](const std::string& key, const std::string& value) {
    header << (header.tellp() > 0 ? "," : "") << key;
    row << (row.tellp() > 0 ? "," : "") << value;
  };
  add("n_cases", std::to_string(n_cases));
  add("mse", fmt(real_score.mse));
  add("mae", fmt(real_score.mae));
  add("cc", fmt(real_score.cc));
  add("r2", fmt(real_score.r2));
  add("mean_auc", fmt(auc.mean_auc));
  for (std::size_t k = 0; k < kNumRegions; ++k) add(std::string("auc_") + kRegionNames[k], fmt(auc.per_region[k]));
  add("pooled_auc", fmt(pooled_auc.mean_auc));
  add("integer_mse", fmt(integer_score.mse));
  add("integer_mae", fmt(integer_score.mae));
  add("integer_cc", fmt(integer_score.cc));
  add("integer_r2", fmt(integer_score.r2));
  return header.str() + "\n" + row.str() + "\n";
}

}  // namespace sevq
