#include "sevq/severity.hpp"

#include <cmath>
#include <sstream>

#include "sevq/errors.hpp"

namespace sevq {

SeverityArray SeverityArray::binary(const std::array<double, kNumRegions>& v) {
  SeverityArray a{v, Kind::kBinary};
  a.validate();
  return a;
}

SeverityArray SeverityArray::probability(const std::array<double, kNumRegions>& v) {
  SeverityArray a{v, Kind::kProbability};
  a.validate();
  return a;
}

void SeverityArray::validate() const {
  for (double v : values) {
    if (kind == Kind::kBinary) {
      if (v != 0.0 && v != 1.0)
        throw ValidationError("binary severity entry must be 0 or 1, got " + std::to_string(v));
    } else if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError("probability severity entry outside [0,1]: " + std::to_string(v));
    }
  }
}

std::string SeverityArray::to_string() const {
  std::ostringstream os;
  os.precision(6);
  os << '[';
  for (int r = 0; r < kSeverityRows; ++r) {
    os << (r ? ",[" : "[") << at(r, 0) << ',' << at(r, 1) << ']';
  }
  os << ']';
  return os.str();
}

SeverityArray map_brixia_label(const std::array<int, kNumRegions>& brixia) {
  SeverityArray out = SeverityArray::zeros(SeverityArray::Kind::kBinary);
  for (std::size_t i = 0; i < brixia.size(); ++i) {
    if (brixia[i] < 0 || brixia[i] > 3)
      throw ValidationError("Brixia zone score must be in {0,1,2,3}, got " + std::to_string(brixia[i]));
    out.values[i] = brixia[i] > 0 ? 1.0 : 0.0;
  }
  return out;
}

int global_score(const SeverityArray& binary_array) {
  int sum = 0;
  for (double v : binary_array.values) {
    if (v != 0.0 && v != 1.0) throw ValidationError("global_score expects a binary severity array");
    sum += static_cast<int>(v);
  }
  return sum;
}

}  // namespace sevq
