#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sevq/model_config.hpp"
#include "sevq/nn/layers.hpp"

namespace sevq {

/// Opaque per-sample activations a backbone keeps for its backward pass.
struct BackboneCache {
  virtual ~BackboneCache() = default;
};

/// Image -> feature grid (grid_h x grid_w x feature_channels). Implementations
/// are immutable descriptors: parameters live in the model's ParamStore.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual nn::FeatureMap forward(const nn::ParamStore& params, const nn::FeatureMap& image,
                                 std::unique_ptr<BackboneCache>& cache) const = 0;
  /// Accumulates parameter gradients. The image gradient is not needed.
  virtual void backward(const nn::ParamStore& params, const BackboneCache& cache, const nn::FeatureMap& grad_out,
                        nn::ParamStore& grads) const = 0;
};

/// Builds a backbone, registering its parameters into `params`.
using BackboneFactory = std::function<std::shared_ptr<const FeatureExtractor>(
    const ModelConfig&, nn::ParamStore& params, nn::Rng& rng)>;

/// Strided 3x3 convolution stack: one stride-2 conv + ReLU per halving of the
/// spatial size, channels doubling up to feature_channels.
class ConvStackBackbone final : public FeatureExtractor {
 public:
  ConvStackBackbone(const ModelConfig& config, nn::ParamStore& params, nn::Rng& rng);

  std::string name() const override { return "conv_stack"; }
  nn::FeatureMap forward(const nn::ParamStore& params, const nn::FeatureMap& image,
                         std::unique_ptr<BackboneCache>& cache) const override;
  void backward(const nn::ParamStore& params, const BackboneCache& cache, const nn::FeatureMap& grad_out,
                nn::ParamStore& grads) const override;

 private:
  std::vector<nn::Conv2d> stages_;
};

/// Factory for built-in backbones by name ("conv_stack"). Throws
/// ValidationError for unknown names.
BackboneFactory backbone_factory(const std::string& name);

}  // namespace sevq
