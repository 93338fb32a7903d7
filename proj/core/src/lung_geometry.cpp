#include "sevq/lung_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sevq/errors.hpp"

namespace sevq {

ComponentLabeling connected_components(const LungMask& mask) {
  if (count_nonzero(mask) == 0) throw GeometryError("connected_components: mask is empty");

  ComponentLabeling out{Grid<int>(mask.rows(), mask.cols(), 0), {}};
  std::vector<Pixel> stack;
  int next_label = 0;
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c) || out.labels(r, c)) continue;
      Component comp;
      comp.label = ++next_label;
      double sum_r = 0.0;
      double sum_c = 0.0;
      out.labels(r, c) = comp.label;
      stack.push_back({r, c});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        ++comp.area;
        sum_r += p.row;
        sum_c += p.col;
        constexpr int dr[4] = {-1, 1, 0, 0};
        constexpr int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = p.row + dr[k];
          const int nc = p.col + dc[k];
          if (nr < 0 || nc < 0 || nr >= mask.rows() || nc >= mask.cols()) continue;
          if (!mask(nr, nc) || out.labels(nr, nc)) continue;
          out.labels(nr, nc) = comp.label;
          stack.push_back({nr, nc});
        }
      }
      comp.centroid_row = sum_r / static_cast<double>(comp.area);
      comp.centroid_col = sum_c / static_cast<double>(comp.area);
      out.components.push_back(comp);
    }
  }
  std::stable_sort(out.components.begin(), out.components.end(),
                   [](const Component& a, const Component& b) { return a.area > b.area; });
  return out;
}

LungSplit split_left_right(const LungMask& mask) {
  const ComponentLabeling cc = connected_components(mask);
  LungSplit split{LungMask(mask.rows(), mask.cols()), LungMask(mask.rows(), mask.cols()), false};

  if (cc.components.size() == 1) {
    std::vector<int> cols;
    for (int r = 0; r < mask.rows(); ++r)
      for (int c = 0; c < mask.cols(); ++c)
        if (mask(r, c)) cols.push_back(c);
    std::nth_element(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(cols.size() / 2), cols.end());
    const int median = cols[cols.size() / 2];
    for (int r = 0; r < mask.rows(); ++r)
      for (int c = 0; c < mask.cols(); ++c)
        if (mask(r, c)) (c < median ? split.right : split.left)(r, c) = 1;
    split.median_fallback = true;
    return split;
  }

  const Component* first = &cc.components[0];
  const Component* second = &cc.components[1];
  const Component& right = first->centroid_col <= second->centroid_col ? *first : *second;
  const Component& left = first->centroid_col <= second->centroid_col ? *second : *first;

  // owner[label] = 0 for patient-right, 1 for patient-left
  std::vector<int> owner(cc.components.size() + 1, 0);
  owner[static_cast<std::size_t>(right.label)] = 0;
  owner[static_cast<std::size_t>(left.label)] = 1;
  auto dist2 = [](const Component& a, const Component& b) {
    const double dr = a.centroid_row - b.centroid_row;
    const double dc = a.centroid_col - b.centroid_col;
    return dr * dr + dc * dc;
  };
  for (std::size_t i = 2; i < cc.components.size(); ++i) {
    const Component& extra = cc.components[i];
    owner[static_cast<std::size_t>(extra.label)] = dist2(extra, right) <= dist2(extra, left) ? 0 : 1;
  }
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      const int label = cc.labels(r, c);
      if (!label) continue;
      (owner[static_cast<std::size_t>(label)] == 0 ? split.right : split.left)(r, c) = 1;
    }
  }
  return split;
}

SplitRows split_rows_for_extent(int top, int bottom) {
  if (bottom <= top) throw GeometryError("lung mask spans a single row; cannot place split rows");
  const int extent = bottom - top;
  return SplitRows{top, bottom, top + (5 * extent) / 12, top + (2 * extent) / 3};
}

SplitRows compute_split_rows(const LungMask& mask) {
  int top = -1;
  int bottom = -1;
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c)) continue;
      if (top < 0) top = r;
      bottom = r;
      break;
    }
  }
  if (top < 0) throw GeometryError("compute_split_rows: mask is empty");
  return split_rows_for_extent(top, bottom);
}

Band band_for_row(const SplitRows& rows, int row) {
  if (row < rows.r1) return Band::kUpper;
  if (row < rows.r2) return Band::kMiddle;
  return Band::kLower;
}

RegionPartition::RegionPartition(Grid<std::uint8_t> index, SplitRows rows_right, SplitRows rows_left,
                                 bool median_fallback)
    : index_(std::move(index)), rows_right_(rows_right), rows_left_(rows_left), median_fallback_(median_fallback) {}

RegionPartition RegionPartition::background(int rows, int cols) {
  return RegionPartition(Grid<std::uint8_t>(rows, cols, kBackground), {}, {}, false);
}

std::array<std::size_t, kNumRegions> RegionPartition::region_areas() const {
  std::array<std::size_t, kNumRegions> areas{};
  for (auto v : index_.values())
    if (v != kBackground) ++areas[v];
  return areas;
}

RegionPartition build_region_partition(const LungMask& mask, SplitMode mode) {
  const LungSplit split = split_left_right(mask);
  SplitRows rows_right;
  SplitRows rows_left;
  if (mode == SplitMode::kGlobal) {
    rows_right = rows_left = compute_split_rows(mask);
  } else {
    const bool has_right = count_nonzero(split.right) > 0;
    const bool has_left = count_nonzero(split.left) > 0;
    const SplitRows global = (has_right && has_left) ? SplitRows{} : compute_split_rows(mask);
    rows_right = has_right ? compute_split_rows(split.right) : global;
    rows_left = has_left ? compute_split_rows(split.left) : global;
  }

  Grid<std::uint8_t> index(mask.rows(), mask.cols(), RegionPartition::kBackground);
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (split.right(r, c)) {
        index(r, c) = static_cast<std::uint8_t>(region_index(band_for_row(rows_right, r), Side::kPatientRight));
      } else if (split.left(r, c)) {
        index(r, c) = static_cast<std::uint8_t>(region_index(band_for_row(rows_left, r), Side::kPatientLeft));
      }
    }
  }
  return RegionPartition(std::move(index), rows_right, rows_left, split.median_fallback);
}

PooledArray roi_max_pool(const ProbabilityMap& map, const RegionPartition& partition) {
  if (map.rows() != partition.rows() || map.cols() != partition.cols())
    throw ValidationError("roi_max_pool: map and partition dimensions differ");
  PooledArray out;
  out.argmax.fill(-1);
  std::array<double, kNumRegions> best;
  best.fill(-std::numeric_limits<double>::infinity());
  const auto& index = partition.index();
  for (std::size_t i = 0; i < map.size(); ++i) {
    const std::uint8_t region = index[i];
    if (region == RegionPartition::kBackground) continue;
    if (map[i] > best[region]) {
      best[region] = map[i];
      out.argmax[region] = static_cast<std::ptrdiff_t>(i);
    }
  }
  for (int k = 0; k < kNumRegions; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    out.empty[ks] = out.argmax[ks] < 0;
    out.array.values[ks] = out.empty[ks] ? 0.0 : best[ks];
  }
  return out;
}

ProbabilityMap roi_max_pool_backward(const PooledArray& pooled, const std::array<double, kNumRegions>& grad,
                                     int rows, int cols) {
  ProbabilityMap g(rows, cols, 0.0);
  for (std::size_t k = 0; k < kNumRegions; ++k)
    if (pooled.argmax[k] >= 0) g[static_cast<std::size_t>(pooled.argmax[k])] += grad[k];
  return g;
}

}  // namespace sevq
