#include "sevq/nn/transformer.hpp"

#include <cmath>
#include <numbers>

#include "sevq/errors.hpp"

namespace sevq::nn {

Linear::Linear(ParamStore& params, Rng& rng, const std::string& name, int in_features, int out_features) {
  weight_ = params.add(name + ".weight", in_features, out_features);
  bias_ = params.add(name + ".bias", 1, out_features);
  init_xavier_uniform(params[weight_], in_features, out_features, rng);
}

Matrix Linear::forward(const ParamStore& params, const Matrix& x) const {
  Matrix y = x * params[weight_];
  y.rowwise() += params[bias_].row(0);
  return y;
}

Matrix Linear::backward(const ParamStore& params, const Matrix& x, const Matrix& grad_out, ParamStore& grads) const {
  grads[weight_].noalias() += x.transpose() * grad_out;
  grads[bias_].row(0) += grad_out.colwise().sum();
  return grad_out * params[weight_].transpose();
}

LayerNorm::LayerNorm(ParamStore& params, const std::string& name, int features, double eps) : eps_(eps) {
  gamma_ = params.add(name + ".gamma", 1, features);
  beta_ = params.add(name + ".beta", 1, features);
  params[gamma_].setOnes();
}

Matrix LayerNorm::forward(const ParamStore& params, const Matrix& x, Cache& cache) const {
  const Eigen::Index n = x.rows();
  const auto d = static_cast<double>(x.cols());
  const Vector mean = x.rowwise().sum() / d;
  cache.normalized = x.colwise() - mean;
  const Vector var = cache.normalized.array().square().rowwise().sum() / d;
  cache.inv_std = (var.array() + eps_).rsqrt();
  for (Eigen::Index i = 0; i < n; ++i) cache.normalized.row(i) *= cache.inv_std(i);
  Matrix y = cache.normalized.array().rowwise() * params[gamma_].row(0).array();
  y.rowwise() += params[beta_].row(0);
  return y;
}

Matrix LayerNorm::backward(const ParamStore& params, const Cache& cache, const Matrix& grad_out,
                           ParamStore& grads) const {
  grads[gamma_].row(0) += (grad_out.array() * cache.normalized.array()).colwise().sum().matrix();
  grads[beta_].row(0) += grad_out.colwise().sum();
  const Matrix dxhat = grad_out.array().rowwise() * params[gamma_].row(0).array();
  const auto d = static_cast<double>(grad_out.cols());
  const Vector sum_d = dxhat.rowwise().sum();
  const Vector sum_dx = (dxhat.array() * cache.normalized.array()).rowwise().sum();
  Matrix dx(grad_out.rows(), grad_out.cols());
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    dx.row(i) = (cache.inv_std(i) / d) *
                (d * dxhat.row(i).array() - sum_d(i) - cache.normalized.row(i).array() * sum_dx(i)).matrix();
  }
  return dx;
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& grad_out) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const Matrix dg = x.unaryExpr([inv_sqrt_2pi](double v) {
    return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi;
  });
  return dg.cwiseProduct(grad_out);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& params, Rng& rng, const std::string& name, int dim, int heads)
    : dim_(dim), heads_(heads) {
  if (heads < 1 || dim % heads != 0) throw ValidationError("MultiHeadAttention: dim must be divisible by heads");
  qkv_ = Linear(params, rng, name + ".qkv", dim, 3 * dim);
  proj_ = Linear(params, rng, name + ".proj", dim, dim);
}

Matrix MultiHeadAttention::forward(const ParamStore& params, const Matrix& x, Cache& cache) const {
  const int dh = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.input = x;
  cache.qkv = qkv_.forward(params, x);
  cache.attention.resize(static_cast<std::size_t>(heads_));
  cache.context.resize(x.rows(), dim_);
  for (int h = 0; h < heads_; ++h) {
    const auto q = cache.qkv.middleCols(h * dh, dh);
    const auto k = cache.qkv.middleCols(dim_ + h * dh, dh);
    const auto v = cache.qkv.middleCols(2 * dim_ + h * dh, dh);
    Matrix& a = cache.attention[static_cast<std::size_t>(h)];
    a.noalias() = (q * k.transpose()) * scale;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double m = a.row(i).maxCoeff();
      a.row(i) = (a.row(i).array() - m).exp().matrix();
      a.row(i) /= a.row(i).sum();
    }
    cache.context.middleCols(h * dh, dh).noalias() = a * v;
  }
  return proj_.forward(params, cache.context);
}

Matrix MultiHeadAttention::backward(const ParamStore& params, const Cache& cache, const Matrix& grad_out,
                                    ParamStore& grads) const {
  const int dh = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix dcontext = proj_.backward(params, cache.context, grad_out, grads);
  Matrix dqkv(cache.qkv.rows(), cache.qkv.cols());
  for (int h = 0; h < heads_; ++h) {
    const auto q = cache.qkv.middleCols(h * dh, dh);
    const auto k = cache.qkv.middleCols(dim_ + h * dh, dh);
    const auto v = cache.qkv.middleCols(2 * dim_ + h * dh, dh);
    const Matrix& a = cache.attention[static_cast<std::size_t>(h)];
    const auto dc = dcontext.middleCols(h * dh, dh);
    const Matrix da = dc * v.transpose();
    dqkv.middleCols(2 * dim_ + h * dh, dh).noalias() = a.transpose() * dc;
    const Vector row_dot = (da.array() * a.array()).rowwise().sum();
    const Matrix ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(dim_ + h * dh, dh).noalias() = ds.transpose() * q;
  }
  return qkv_.backward(params, cache.input, dqkv, grads);
}

EncoderBlock::EncoderBlock(ParamStore& params, Rng& rng, const std::string& name, int dim, int heads, int mlp_dim)
    : ln1_(params, name + ".ln1", dim),
      attn_(params, rng, name + ".attn", dim, heads),
      ln2_(params, name + ".ln2", dim),
      fc1_(params, rng, name + ".mlp.fc1", dim, mlp_dim),
      fc2_(params, rng, name + ".mlp.fc2", mlp_dim, dim) {}

Matrix EncoderBlock::forward(const ParamStore& params, const Matrix& z, Cache& cache) const {
  cache.residual = attn_.forward(params, ln1_.forward(params, z, cache.ln1), cache.attn) + z;
  cache.mlp_in = ln2_.forward(params, cache.residual, cache.ln2);
  cache.hidden_pre = fc1_.forward(params, cache.mlp_in);
  cache.hidden = gelu(cache.hidden_pre);
  return fc2_.forward(params, cache.hidden) + cache.residual;
}

Matrix EncoderBlock::backward(const ParamStore& params, const Cache& cache, const Matrix& grad_out,
                              ParamStore& grads) const {
  Matrix d = fc2_.backward(params, cache.hidden, grad_out, grads);
  d = gelu_backward(cache.hidden_pre, d);
  d = fc1_.backward(params, cache.mlp_in, d, grads);
  Matrix d_residual = ln2_.backward(params, cache.ln2, d, grads) + grad_out;
  Matrix da = attn_.backward(params, cache.attn, d_residual, grads);
  return ln1_.backward(params, cache.ln1, da, grads) + d_residual;
}

}  // namespace sevq::nn
