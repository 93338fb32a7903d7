#include "sevq/nn/params.hpp"

#include <cmath>

#include "sevq/errors.hpp"

namespace sevq::nn {

int ParamStore::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(Matrix::Zero(rows, cols));
  return static_cast<int>(values_.size()) - 1;
}

std::optional<int> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

std::size_t ParamStore::total_elements() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  out.names_ = names_;
  out.values_.reserve(values_.size());
  for (const auto& v : values_) out.values_.push_back(Matrix::Zero(v.rows(), v.cols()));
  return out;
}

void ParamStore::set_zero() {
  for (auto& v : values_) v.setZero();
}

void ParamStore::add_scaled(const ParamStore& other, double scale) {
  if (!same_layout(other)) throw ValidationError("ParamStore::add_scaled: layout mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i].noalias() += scale * other.values_[i];
}

bool ParamStore::same_layout(const ParamStore& other) const noexcept {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols()) return false;
  return true;
}

bool ParamStore::all_finite() const {
  for (const auto& v : values_)
    if (!v.allFinite()) return false;
  return true;
}

std::pair<int, Eigen::Index> ParamStore::locate(std::size_t flat_index) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto n = static_cast<std::size_t>(values_[i].size());
    if (flat_index < n) return {static_cast<int>(i), static_cast<Eigen::Index>(flat_index)};
    flat_index -= n;
  }
  throw ValidationError("ParamStore: flat index out of range");
}

double& ParamStore::element(std::size_t flat_index) {
  const auto [id, off] = locate(flat_index);
  return values_[static_cast<std::size_t>(id)].data()[off];
}

double ParamStore::element(std::size_t flat_index) const {
  const auto [id, off] = locate(flat_index);
  return values_[static_cast<std::size_t>(id)].data()[off];
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.values_.size(); ++i)
    if (!(a.values_[i].array() == b.values_[i].array()).all()) return false;
  return true;
}

void init_normal(Matrix& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void init_he(Matrix& m, Eigen::Index fan_in, Rng& rng) {
  init_normal(m, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

void init_xavier_uniform(Matrix& m, Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

}  // namespace sevq::nn
