#pragma once

#include <string>

namespace sevq {

struct ModelConfig {
  int grid_h = 8;
  int grid_w = 8;
  int feature_channels = 32;  ///< C'
  int token_dim = 64;         ///< D
  int depth = 2;              ///< L
  int heads = 4;
  int mlp_ratio = 4;
  int map_head_blocks = 3;
  int output_side = 64;
  std::string backbone = "conv_stack";
  /// Initial bias of the final 1-channel map convolution.
  double head_bias_init = 0.0;

  /// 64x64 input, 8x8 token grid, CPU-trainable.
  static ModelConfig desk();
  /// ViT-B/16 sized: 16x16x1024 features, D=768, L=12, 4 upsizing blocks.
  static ModelConfig full_scale();

  int mlp_dim() const noexcept { return mlp_ratio * token_dim; }
  int num_tokens() const noexcept { return 1 + grid_h * grid_w; }
  /// Channel count after upsizing block `i` (0-based).
  int head_channels(int i) const noexcept;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace sevq
