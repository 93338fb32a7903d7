#include "sevq/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "sevq/errors.hpp"
#include "sevq/lung_geometry.hpp"
#include "sevq/png_io.hpp"

namespace sevq {
namespace {

struct Lobe {
  double center_row;
  double center_col;
  double half_height;
  double half_width;
};

LungMask draw_lobes(int side, const Lobe& a, const Lobe& b) {
  LungMask mask(side, side);
  for (const Lobe& lobe : {a, b}) {
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        const double dy = (r - lobe.center_row) / lobe.half_height;
        const double dx = (c - lobe.center_col) / lobe.half_width;
        if (dy * dy + dx * dx <= 1.0) mask(r, c) = 1;
      }
    }
  }
  return mask;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (side < 32) throw ValidationError("SyntheticConfig: side must be >= 32");
  if (min_blobs < 0 || max_blobs < min_blobs) throw ValidationError("SyntheticConfig: invalid blob count range");
  if (!(blob_radius > 0.0)) throw ValidationError("SyntheticConfig: blob_radius must be positive");
  if (contrast < 0.0 || noise_sigma < 0.0) throw ValidationError("SyntheticConfig: contrast and noise must be >= 0");
}

SeverityArray label_from_centers(const LungMask& mask, const std::vector<Pixel>& centers) {
  SeverityArray label = SeverityArray::zeros(SeverityArray::Kind::kBinary);
  if (centers.empty()) return label;
  const RegionPartition partition = build_region_partition(mask);
  for (const Pixel& p : centers) {
    const std::uint8_t region = partition.at(p.row, p.col);
    if (region == RegionPartition::kBackground) throw ValidationError("blob center lies outside the lung mask");
    label.values[region] = 1.0;
  }
  return label;
}

SyntheticCase generate_synthetic_case(std::uint64_t seed, const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double s = config.side;

  const double mid_row = s * (0.50 + 0.02 * jitter(rng));
  const Lobe right{mid_row + s * 0.01 * jitter(rng), s * (0.29 + 0.02 * jitter(rng)),
                   s * (0.36 + 0.03 * jitter(rng)), s * (0.15 + 0.015 * jitter(rng))};
  const Lobe left{mid_row + s * 0.01 * jitter(rng), s * (0.71 + 0.02 * jitter(rng)),
                  s * (0.34 + 0.03 * jitter(rng)), s * (0.14 + 0.015 * jitter(rng))};

  SyntheticCase out;
  out.mask = draw_lobes(config.side, right, left);

  const SplitRows rows = compute_split_rows(out.mask);
  const int min_band = std::min({rows.r1 - rows.top, rows.r2 - rows.r1, rows.bottom - rows.r2 + 1});
  if (config.blob_radius >= min_band)
    throw ValidationError("SyntheticConfig: blob_radius must be smaller than the lung band height (" +
                          std::to_string(min_band) + " px)");

  std::vector<Pixel> in_mask;
  for (int r = 0; r < config.side; ++r)
    for (int c = 0; c < config.side; ++c)
      if (out.mask(r, c)) in_mask.push_back({r, c});
  std::uniform_int_distribution<std::size_t> pick(0, in_mask.size() - 1);

  if (config.fixed_centers) {
    for (const Pixel& p : *config.fixed_centers) {
      const bool inside = p.row >= 0 && p.col >= 0 && p.row < config.side && p.col < config.side && out.mask(p.row, p.col);
      out.blob_centers.push_back(inside ? p : in_mask[pick(rng)]);
    }
  } else {
    std::uniform_int_distribution<int> count(config.min_blobs, config.max_blobs);
    const int n = count(rng);
    for (int i = 0; i < n; ++i) out.blob_centers.push_back(in_mask[pick(rng)]);
  }

  // Bright mediastinum and soft tissue, darker lung fields with a vertical
  // gradient, additive opacities, then sensor noise.
  out.image = ImageTensor(config.side, config.side);
  const double tilt = 0.05 * jitter(rng);
  for (int r = 0; r < config.side; ++r)
    for (int c = 0; c < config.side; ++c) {
      const double base = out.mask(r, c) ? 0.25 + 0.08 * (r / s) : 0.6 + tilt * (c / s - 0.5);
      out.image(r, c) = base;
    }

  const double sigma = config.blob_radius / 1.5;
  const int reach = static_cast<int>(std::ceil(3.0 * sigma));
  for (const Pixel& p : out.blob_centers) {
    const double amplitude = config.contrast * (0.85 + 0.15 * jitter(rng));
    for (int r = std::max(0, p.row - reach); r <= std::min(config.side - 1, p.row + reach); ++r)
      for (int c = std::max(0, p.col - reach); c <= std::min(config.side - 1, p.col + reach); ++c) {
        const double d2 = (r - p.row) * (r - p.row) + (c - p.col) * (c - p.col);
        out.image(r, c) += amplitude * std::exp(-d2 / (2.0 * sigma * sigma));
      }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < out.image.size(); ++i) {
    const double v = std::clamp(out.image[i] + config.noise_sigma * noise(rng), 0.0, 1.0);
    out.image[i] = std::round(v * 65535.0) / 65535.0;
  }

  out.label = label_from_centers(out.mask, out.blob_centers);
  return out;
}

SyntheticFiles write_synthetic_case(const std::filesystem::path& dir, const std::string& stem,
                                    const SyntheticCase& sample) {
  SyntheticFiles files{dir / (stem + "_image.png"), dir / (stem + "_mask.png"), dir / (stem + "_blobs.txt")};
  write_png_gray16(files.image, sample.image);
  write_png_mask(files.mask, sample.mask);
  std::ofstream out(files.centers);
  if (!out) throw IoError("cannot write '" + files.centers.string() + "'");
  for (const Pixel& p : sample.blob_centers) out << p.row << ' ' << p.col << '\n';
  return files;
}

std::vector<Pixel> read_blob_centers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<Pixel> centers;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    Pixel p;
    if (!(fields >> p.row >> p.col)) throw ParseError(path.string(), line_no, "expected 'row col'");
    centers.push_back(p);
  }
  return centers;
}

}  // namespace sevq
