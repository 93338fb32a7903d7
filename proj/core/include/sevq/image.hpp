#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sevq/errors.hpp"

namespace sevq {

/// Dense row-major 2-D grid. Pixel (r, c) lives at index r * cols + c.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ValidationError("Grid: negative dimensions");
    data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill);
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int r, int c) noexcept { return data_[index(r, c)]; }
  const T& operator()(int r, int c) const noexcept { return data_[index(r, c)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  std::size_t index(int r, int c) const noexcept {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(c);
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// Real-valued single-channel image.
using ImageTensor = Grid<double>;
/// Binary lung mask, entries in {0, 1}.
using LungMask = Grid<std::uint8_t>;
/// Per-pixel lesion probability in [0, 1], zero outside the lung mask.
using ProbabilityMap = Grid<double>;

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

inline bool is_binary(const LungMask& mask) {
  for (auto v : mask.values())
    if (v > 1) return false;
  return true;
}

inline std::size_t count_nonzero(const LungMask& mask) {
  std::size_t n = 0;
  for (auto v : mask.values()) n += v != 0;
  return n;
}

}  // namespace sevq
