#pragma once

#include <string>

#include "sevq/nn/params.hpp"

namespace sevq::nn {

/// Channel-major activation: data is channels x (height * width), pixel
/// (y, x) at column y * width + x.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix::Zero(c, h * w)) {}
  int pixels() const noexcept { return height * width; }
};

// Spatial layers. Each layer is an immutable descriptor holding parameter ids;
// activations needed by the backward pass live in caller-owned caches.

class Conv2d {
 public:
  struct Cache {
    Matrix columns;  ///< im2col of the input
    int in_height = 0;
    int in_width = 0;
  };

  Conv2d() = default;
  Conv2d(ParamStore& params, Rng& rng, const std::string& name, int in_channels, int out_channels, int kernel,
         int stride, int padding);

  FeatureMap forward(const ParamStore& params, const FeatureMap& x, Cache& cache) const;
  /// Accumulates weight gradients; returns dL/dx when `need_input_grad`.
  FeatureMap backward(const ParamStore& params, const Cache& cache, const FeatureMap& grad_out, ParamStore& grads,
                      bool need_input_grad = true) const;

  int out_size(int in) const noexcept { return (in + 2 * padding_ - kernel_) / stride_ + 1; }
  int out_channels() const noexcept { return out_channels_; }
  int weight_id() const noexcept { return weight_; }
  int bias_id() const noexcept { return bias_; }

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int padding_ = 0;
  int weight_ = -1;  ///< out x (k * k * in), kernel offset major, channel minor
  int bias_ = -1;    ///< out x 1
};

/// Group normalization with per-channel affine; statistics are per sample.
class GroupNorm {
 public:
  struct Cache {
    Matrix normalized;
    Vector inv_std;  ///< per group
  };

  GroupNorm() = default;
  GroupNorm(ParamStore& params, const std::string& name, int channels, int groups, double eps = 1e-5);

  FeatureMap forward(const ParamStore& params, const FeatureMap& x, Cache& cache) const;
  FeatureMap backward(const ParamStore& params, const Cache& cache, const FeatureMap& grad_out,
                      ParamStore& grads) const;

 private:
  int channels_ = 0;
  int groups_ = 1;
  double eps_ = 1e-5;
  int gamma_ = -1;
  int beta_ = -1;
};

FeatureMap relu(const FeatureMap& x);
/// Backward of ReLU given its output.
FeatureMap relu_backward(const FeatureMap& output, const FeatureMap& grad_out);

FeatureMap upsample2x(const FeatureMap& x);
FeatureMap upsample2x_backward(const FeatureMap& grad_out);

double sigmoid(double z);

}  // namespace sevq::nn
