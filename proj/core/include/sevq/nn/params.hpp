#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sevq::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Named parameter tensors, stored as matrices in registration order.
/// Gradient buffers and optimizer state are ParamStores with the same layout.
class ParamStore {
 public:
  /// Registers a zero-initialized tensor and returns its id.
  int add(std::string name, Eigen::Index rows, Eigen::Index cols);

  Matrix& operator[](int id) { return values_[static_cast<std::size_t>(id)]; }
  const Matrix& operator[](int id) const { return values_[static_cast<std::size_t>(id)]; }
  const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }
  std::optional<int> find(const std::string& name) const;

  int size() const noexcept { return static_cast<int>(values_.size()); }
  std::size_t total_elements() const noexcept;

  ParamStore zeros_like() const;
  void set_zero();
  /// this += scale * other
  void add_scaled(const ParamStore& other, double scale);
  bool same_layout(const ParamStore& other) const noexcept;
  bool all_finite() const;

  double& element(std::size_t flat_index);
  double element(std::size_t flat_index) const;
  /// Tensor id and offset of a flat element index.
  std::pair<int, Eigen::Index> locate(std::size_t flat_index) const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

void init_normal(Matrix& m, double stddev, Rng& rng);
/// He-normal for a fan-in of `fan_in`.
void init_he(Matrix& m, Eigen::Index fan_in, Rng& rng);
void init_xavier_uniform(Matrix& m, Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

}  // namespace sevq::nn
