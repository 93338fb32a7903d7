#include "sevq/nn/layers.hpp"

#include <cmath>

#include "sevq/errors.hpp"

namespace sevq::nn {

Conv2d::Conv2d(ParamStore& params, Rng& rng, const std::string& name, int in_channels, int out_channels, int kernel,
               int stride, int padding)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  const Eigen::Index fan_in = static_cast<Eigen::Index>(in_channels) * kernel * kernel;
  weight_ = params.add(name + ".weight", out_channels, fan_in);
  bias_ = params.add(name + ".bias", out_channels, 1);
  init_he(params[weight_], fan_in, rng);
}

// Patch layout: column p of the im2col matrix holds, for each kernel offset
// (ky, kx) in row-major order, the in_channels values of the input pixel under
// it. Feature maps store each pixel's channels contiguously, so every offset is
// a straight block copy.
FeatureMap Conv2d::forward(const ParamStore& params, const FeatureMap& x, Cache& cache) const {
  if (x.channels != in_channels_) throw ValidationError("Conv2d: channel mismatch");
  const int oh = out_size(x.height);
  const int ow = out_size(x.width);
  const int k = kernel_;
  const Eigen::Index cin = in_channels_;
  cache.in_height = x.height;
  cache.in_width = x.width;
  // Only entries that fall in the zero padding are cleared explicitly.
  cache.columns.resize(cin * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      auto patch = cache.columns.col(static_cast<Eigen::Index>(oy) * ow + ox);
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride_ - padding_ + ky;
        if (iy < 0 || iy >= x.height) {
          patch.segment(ky * k * cin, k * cin).setZero();
          continue;
        }
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride_ - padding_ + kx;
          if (ix < 0 || ix >= x.width)
            patch.segment((ky * k + kx) * cin, cin).setZero();
          else
            patch.segment((ky * k + kx) * cin, cin) = x.data.col(iy * x.width + ix);
        }
      }
    }
  }
  FeatureMap y;
  y.channels = out_channels_;
  y.height = oh;
  y.width = ow;
  y.data.noalias() = params[weight_] * cache.columns;
  y.data.colwise() += params[bias_].col(0);
  return y;
}

FeatureMap Conv2d::backward(const ParamStore& params, const Cache& cache, const FeatureMap& grad_out,
                            ParamStore& grads, bool need_input_grad) const {
  grads[weight_].noalias() += grad_out.data * cache.columns.transpose();
  grads[bias_].col(0) += grad_out.data.rowwise().sum();
  if (!need_input_grad) return {};

  Matrix dcols;
  dcols.noalias() = params[weight_].transpose() * grad_out.data;
  FeatureMap dx(in_channels_, cache.in_height, cache.in_width);
  const int oh = grad_out.height;
  const int ow = grad_out.width;
  const int k = kernel_;
  const Eigen::Index cin = in_channels_;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index p = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride_ - padding_ + ky;
        if (iy < 0 || iy >= dx.height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride_ - padding_ + kx;
          if (ix < 0 || ix >= dx.width) continue;
          dx.data.col(iy * dx.width + ix) += dcols.col(p).segment((ky * k + kx) * cin, cin);
        }
      }
    }
  }
  return dx;
}

GroupNorm::GroupNorm(ParamStore& params, const std::string& name, int channels, int groups, double eps)
    : channels_(channels), groups_(groups), eps_(eps) {
  if (groups < 1 || channels % groups != 0) throw ValidationError("GroupNorm: channels must divide into groups");
  gamma_ = params.add(name + ".gamma", channels, 1);
  beta_ = params.add(name + ".beta", channels, 1);
  params[gamma_].setOnes();
}

FeatureMap GroupNorm::forward(const ParamStore& params, const FeatureMap& x, Cache& cache) const {
  const int per_group = channels_ / groups_;
  cache.normalized.resize(x.data.rows(), x.data.cols());
  cache.inv_std.resize(groups_);
  FeatureMap y(x.channels, x.height, x.width);
  for (int g = 0; g < groups_; ++g) {
    const auto block = x.data.middleRows(g * per_group, per_group);
    const double mean = block.mean();
    const double var = (block.array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps_);
    cache.inv_std(g) = inv;
    cache.normalized.middleRows(g * per_group, per_group) = (block.array() - mean) * inv;
  }
  const auto& gamma = params[gamma_];
  const auto& beta = params[beta_];
  for (int c = 0; c < channels_; ++c)
    y.data.row(c) = (cache.normalized.row(c).array() * gamma(c, 0) + beta(c, 0)).matrix();
  return y;
}

FeatureMap GroupNorm::backward(const ParamStore& params, const Cache& cache, const FeatureMap& grad_out,
                               ParamStore& grads) const {
  const int per_group = channels_ / groups_;
  const auto& gamma = params[gamma_];
  grads[gamma_].col(0) += (grad_out.data.array() * cache.normalized.array()).rowwise().sum().matrix();
  grads[beta_].col(0) += grad_out.data.rowwise().sum();

  Matrix dxhat = grad_out.data;
  for (int c = 0; c < channels_; ++c) dxhat.row(c) *= gamma(c, 0);

  FeatureMap dx(grad_out.channels, grad_out.height, grad_out.width);
  for (int g = 0; g < groups_; ++g) {
    const auto dh = dxhat.middleRows(g * per_group, per_group).array();
    const auto xh = cache.normalized.middleRows(g * per_group, per_group).array();
    const double m = static_cast<double>(dh.size());
    const double sum_d = dh.sum();
    const double sum_dx = (dh * xh).sum();
    dx.data.middleRows(g * per_group, per_group) =
        ((cache.inv_std(g) / m) * (m * dh - sum_d - xh * sum_dx)).matrix();
  }
  return dx;
}

FeatureMap relu(const FeatureMap& x) {
  FeatureMap y = x;
  y.data = x.data.cwiseMax(0.0);
  return y;
}

FeatureMap relu_backward(const FeatureMap& output, const FeatureMap& grad_out) {
  FeatureMap dx = grad_out;
  dx.data = (output.data.array() > 0.0).select(grad_out.data, 0.0);
  return dx;
}

FeatureMap upsample2x(const FeatureMap& x) {
  FeatureMap y(x.channels, x.height * 2, x.width * 2);
  for (int yy = 0; yy < y.height; ++yy)
    for (int xx = 0; xx < y.width; ++xx) y.data.col(yy * y.width + xx) = x.data.col((yy / 2) * x.width + xx / 2);
  return y;
}

FeatureMap upsample2x_backward(const FeatureMap& grad_out) {
  FeatureMap dx(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
  for (int yy = 0; yy < grad_out.height; ++yy)
    for (int xx = 0; xx < grad_out.width; ++xx)
      dx.data.col((yy / 2) * dx.width + xx / 2) += grad_out.data.col(yy * grad_out.width + xx);
  return dx;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace sevq::nn
