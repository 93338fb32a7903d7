#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "sevq/backbone.hpp"
#include "sevq/image.hpp"
#include "sevq/lung_geometry.hpp"
#include "sevq/model_config.hpp"
#include "sevq/nn/layers.hpp"
#include "sevq/nn/transformer.hpp"
#include "sevq/preprocessing.hpp"

namespace sevq {

/// Result of a forward pass: the masked probability map and its pooled
/// severity array.
struct ModelOutput {
  ProbabilityMap map;
  PooledArray pooled;
};

/// Hybrid backbone: feature embedding -> 1x1 token projection with class token
/// and learned positional embedding -> pre-norm transformer encoder -> upsizing
/// map head with sigmoid -> lung-mask multiplication -> ROI max pooling.
///
/// The model is a value type: copying it copies all parameters, which is how
/// a student is made from a teacher.
class Model {
 public:
  /// Activations of one forward pass, consumed by backward().
  struct Trace;
  struct TraceDeleter {
    void operator()(Trace* t) const noexcept;
  };
  using TracePtr = std::unique_ptr<Trace, TraceDeleter>;

  explicit Model(ModelConfig config, std::uint64_t seed = 0, const BackboneFactory& backbone = {});

  const ModelConfig& config() const noexcept { return config_; }
  const FeatureExtractor& backbone() const noexcept { return *backbone_; }
  nn::ParamStore& params() noexcept { return params_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  /// Replaces all parameters; throws ValidationError on a layout mismatch.
  void set_params(nn::ParamStore params);

  // Individual stages, exposed for inspection and tests.
  nn::FeatureMap embed_features(const ImageTensor& image) const;
  nn::Matrix tokenize(const nn::FeatureMap& features) const;
  /// Runs the encoder. `tokens` is (1 + grid_h * grid_w) x token_dim.
  nn::Matrix transformer_encode(const nn::Matrix& tokens) const;
  /// Drops the class token and decodes the rest into a pre-mask map.
  ProbabilityMap map_head(const nn::Matrix& encoded) const;

  /// Full forward pass. Builds the region partition from `mask`; an all-zero
  /// mask yields a zero map and a zero array with every region flagged empty.
  ModelOutput forward(const ImageTensor& image, const LungMask& mask) const;
  ModelOutput forward(const ImageTensor& image, const LungMask& mask, const RegionPartition& partition) const;

  TracePtr forward_trace(const ImageTensor& image, const LungMask& mask,
                         const RegionPartition& partition) const;
  const ModelOutput& output(const Trace& trace) const;
  /// Backpropagates dL/d(pooled array) into `grads` (same layout as params()).
  void backward(const Trace& trace, const std::array<double, kNumRegions>& grad_array, nn::ParamStore& grads) const;

  int positional_embedding_id() const noexcept { return pos_embed_; }
  int class_token_id() const noexcept { return cls_token_; }

 private:
  struct HeadBlock {
    nn::Conv2d conv;
    nn::GroupNorm norm;
  };

  void validate_image(const ImageTensor& image, const LungMask& mask) const;

  ModelConfig config_;
  nn::ParamStore params_;
  std::shared_ptr<const FeatureExtractor> backbone_;
  nn::Linear token_proj_;
  int cls_token_ = -1;  ///< 1 x D
  int pos_embed_ = -1;  ///< (1 + H'W') x D
  std::vector<nn::EncoderBlock> blocks_;
  std::vector<HeadBlock> head_;
  nn::Conv2d head_out_;
};

}  // namespace sevq
