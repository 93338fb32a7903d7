#pragma once

#include <string>
#include <vector>

#include "sevq/nn/params.hpp"

namespace sevq::nn {

// Token-level layers operate on (tokens x features) matrices.

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& params, Rng& rng, const std::string& name, int in_features, int out_features);

  Matrix forward(const ParamStore& params, const Matrix& x) const;
  /// Accumulates weight gradients given the layer input; returns dL/dx.
  Matrix backward(const ParamStore& params, const Matrix& x, const Matrix& grad_out, ParamStore& grads) const;

  int weight_id() const noexcept { return weight_; }
  int bias_id() const noexcept { return bias_; }

 private:
  int weight_ = -1;  ///< in x out
  int bias_ = -1;    ///< 1 x out
};

class LayerNorm {
 public:
  struct Cache {
    Matrix normalized;
    Vector inv_std;  ///< per row
  };

  LayerNorm() = default;
  LayerNorm(ParamStore& params, const std::string& name, int features, double eps = 1e-6);

  Matrix forward(const ParamStore& params, const Matrix& x, Cache& cache) const;
  Matrix backward(const ParamStore& params, const Cache& cache, const Matrix& grad_out, ParamStore& grads) const;

 private:
  double eps_ = 1e-6;
  int gamma_ = -1;
  int beta_ = -1;
};

Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& grad_out);

class MultiHeadAttention {
 public:
  struct Cache {
    Matrix input;
    Matrix qkv;
    std::vector<Matrix> attention;  ///< per head, softmax rows
    Matrix context;                 ///< concatenated head outputs
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& params, Rng& rng, const std::string& name, int dim, int heads);

  Matrix forward(const ParamStore& params, const Matrix& x, Cache& cache) const;
  Matrix backward(const ParamStore& params, const Cache& cache, const Matrix& grad_out, ParamStore& grads) const;

 private:
  int dim_ = 0;
  int heads_ = 1;
  Linear qkv_;
  Linear proj_;
};

/// Pre-norm block: z' = MSA(LN(z)) + z ; out = MLP(LN(z')) + z'.
class EncoderBlock {
 public:
  struct Cache {
    LayerNorm::Cache ln1;
    MultiHeadAttention::Cache attn;
    Matrix residual;  ///< z'
    LayerNorm::Cache ln2;
    Matrix mlp_in;
    Matrix hidden_pre;
    Matrix hidden;
  };

  EncoderBlock() = default;
  EncoderBlock(ParamStore& params, Rng& rng, const std::string& name, int dim, int heads, int mlp_dim);

  Matrix forward(const ParamStore& params, const Matrix& z, Cache& cache) const;
  Matrix backward(const ParamStore& params, const Cache& cache, const Matrix& grad_out, ParamStore& grads) const;

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  Linear fc1_;
  Linear fc2_;
};

}  // namespace sevq::nn
