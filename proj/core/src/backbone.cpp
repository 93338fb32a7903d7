#include "sevq/backbone.hpp"

#include <algorithm>

#include "sevq/errors.hpp"

namespace sevq {
namespace {

struct ConvStackCache final : BackboneCache {
  std::vector<nn::Conv2d::Cache> conv;
  std::vector<nn::FeatureMap> activations;  ///< post-ReLU output of each stage
};

}  // namespace

ConvStackBackbone::ConvStackBackbone(const ModelConfig& config, nn::ParamStore& params, nn::Rng& rng) {
  int stages = 0;
  for (int side = config.output_side; side > config.grid_h; side /= 2) ++stages;
  if (stages == 0) throw ValidationError("conv_stack backbone needs output_side > grid_h");
  int in = 1;
  for (int s = 0; s < stages; ++s) {
    const int out = std::max(8, config.feature_channels >> (stages - 1 - s));
    const int channels = s + 1 == stages ? config.feature_channels : std::min(out, config.feature_channels);
    stages_.emplace_back(params, rng, "backbone.conv" + std::to_string(s), in, channels, 3, 2, 1);
    in = channels;
  }
}

nn::FeatureMap ConvStackBackbone::forward(const nn::ParamStore& params, const nn::FeatureMap& image,
                                          std::unique_ptr<BackboneCache>& cache) const {
  auto c = std::make_unique<ConvStackCache>();
  c->conv.resize(stages_.size());
  c->activations.reserve(stages_.size());
  const nn::FeatureMap* x = &image;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    c->activations.push_back(nn::relu(stages_[s].forward(params, *x, c->conv[s])));
    x = &c->activations.back();
  }
  nn::FeatureMap out = c->activations.back();
  cache = std::move(c);
  return out;
}

void ConvStackBackbone::backward(const nn::ParamStore& params, const BackboneCache& cache,
                                 const nn::FeatureMap& grad_out, nn::ParamStore& grads) const {
  const auto& c = dynamic_cast<const ConvStackCache&>(cache);
  nn::FeatureMap d = grad_out;
  for (std::size_t s = stages_.size(); s-- > 0;) {
    d = nn::relu_backward(c.activations[s], d);
    d = stages_[s].backward(params, c.conv[s], d, grads, s > 0);
  }
}

BackboneFactory backbone_factory(const std::string& name) {
  if (name == "conv_stack") {
    return [](const ModelConfig& config, nn::ParamStore& params, nn::Rng& rng) {
      return std::make_shared<const ConvStackBackbone>(config, params, rng);
    };
  }
  throw ValidationError("unknown backbone '" + name + "'");
}

}  // namespace sevq
