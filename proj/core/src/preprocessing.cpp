#include "sevq/preprocessing.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "sevq/errors.hpp"

namespace sevq {
namespace {

constexpr int kHistogramBins = 256;

// Relative spread under which an image is treated as constant.
constexpr double kFlatTolerance = 1e-12;

bool is_flat(double lo, double hi) { return hi - lo <= kFlatTolerance * std::max(1.0, std::abs(hi)); }

// Half-sample symmetric extension: ... b a | a b c ... c b | b ...
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (target_side < 32) throw ValidationError("PreprocessConfig: target_side must be >= 32");
  if (blur_kernel < 1 || blur_kernel % 2 == 0)
    throw ValidationError("PreprocessConfig: blur_kernel must be odd and >= 1");
}

std::uint64_t PreprocessConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(target_side));
  mix(static_cast<std::uint64_t>(blur_kernel));
  mix(standardize ? 1U : 0U);
  return h;
}

ImageTensor resize_bilinear(const ImageTensor& image, int rows, int cols) {
  if (image.empty()) throw ValidationError("resize: empty image");
  if (rows == image.rows() && cols == image.cols()) return image;
  ImageTensor out(rows, cols);
  const double sy = static_cast<double>(image.rows()) / rows;
  const double sx = static_cast<double>(image.cols()) / cols;
  for (int r = 0; r < rows; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.rows() - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.rows() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < cols; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.cols() - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.cols() - 1);
      const double wx = fx - x0;
      const double top = image(y0, x0) * (1.0 - wx) + image(y0, x1) * wx;
      const double bot = image(y1, x0) * (1.0 - wx) + image(y1, x1) * wx;
      out(r, c) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

ImageTensor gaussian_blur(const ImageTensor& image, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError("gaussian_blur: kernel must be odd and >= 1");
  if (kernel == 1) return image;
  const int radius = kernel / 2;
  const double sigma = kernel / 6.0;
  std::vector<double> w(static_cast<std::size_t>(kernel));
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    w[static_cast<std::size_t>(k + radius)] = std::exp(-(k * k) / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(k + radius)];
  }
  for (double& v : w) v /= total;

  ImageTensor tmp(image.rows(), image.cols());
  for (int r = 0; r < image.rows(); ++r)
    for (int c = 0; c < image.cols(); ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += w[static_cast<std::size_t>(k + radius)] * image(r, reflect(c + k, image.cols()));
      tmp(r, c) = acc;
    }
  ImageTensor out(image.rows(), image.cols());
  for (int r = 0; r < image.rows(); ++r)
    for (int c = 0; c < image.cols(); ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += w[static_cast<std::size_t>(k + radius)] * tmp(reflect(r + k, image.rows()), c);
      out(r, c) = acc;
    }
  return out;
}

ImageTensor equalize_histogram(const ImageTensor& image) {
  if (image.empty()) return image;
  const auto [lo_it, hi_it] = std::minmax_element(image.values().begin(), image.values().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (is_flat(lo, hi)) return image;

  auto bin_of = [&](double v) {
    const int b = static_cast<int>((v - lo) / (hi - lo) * kHistogramBins);
    return std::clamp(b, 0, kHistogramBins - 1);
  };
  std::array<std::size_t, kHistogramBins> cdf{};
  for (double v : image.values()) ++cdf[static_cast<std::size_t>(bin_of(v))];
  for (int b = 1; b < kHistogramBins; ++b) cdf[static_cast<std::size_t>(b)] += cdf[static_cast<std::size_t>(b - 1)];
  const std::size_t n = image.size();
  const std::size_t cdf_min = *std::find_if(cdf.begin(), cdf.end(), [](std::size_t v) { return v > 0; });
  if (n == cdf_min) return image;

  ImageTensor out(image.rows(), image.cols());
  const double denom = static_cast<double>(n - cdf_min);
  for (std::size_t i = 0; i < image.size(); ++i)
    out[i] = static_cast<double>(cdf[static_cast<std::size_t>(bin_of(image[i]))] - cdf_min) / denom;
  return out;
}

ImageTensor standardize(const ImageTensor& image) {
  ImageTensor out(image.rows(), image.cols(), 0.0);
  if (image.empty()) return out;
  const auto n = static_cast<double>(image.size());
  double mean = 0.0;
  for (double v : image.values()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : image.values()) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::sqrt(var);
  if (sd <= kFlatTolerance * std::max(1.0, std::abs(mean))) return out;
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = (image[i] - mean) / sd;
  return out;
}

PreprocessedImage preprocess(const ImageTensor& image, const PreprocessConfig& config) {
  config.validate();
  if (image.empty()) throw ValidationError("preprocess: empty image");
  for (double v : image.values())
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("preprocess: image values must be finite and >= 0");

  ImageTensor x = resize_bilinear(image, config.target_side, config.target_side);
  x = gaussian_blur(x, config.blur_kernel);
  x = equalize_histogram(x);
  if (config.standardize) x = standardize(x);
  return PreprocessedImage{std::move(x), image.rows(), image.cols(), config.hash()};
}

LungMask resize_mask(const LungMask& mask, int target_side) {
  if (!is_binary(mask)) throw ValidationError("resize_mask: mask must be binary");
  if (target_side < 1) throw ValidationError("resize_mask: target_side must be positive");
  if (mask.rows() == target_side && mask.cols() == target_side) return mask;
  if (mask.empty()) throw ValidationError("resize_mask: empty mask");
  LungMask out(target_side, target_side);
  for (int r = 0; r < target_side; ++r) {
    const int sr = std::min(mask.rows() - 1, static_cast<int>((r + 0.5) * mask.rows() / target_side));
    for (int c = 0; c < target_side; ++c) {
      const int sc = std::min(mask.cols() - 1, static_cast<int>((c + 0.5) * mask.cols() / target_side));
      out(r, c) = mask(sr, sc);
    }
  }
  return out;
}

}  // namespace sevq
