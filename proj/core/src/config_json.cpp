#include "sevq/config_json.hpp"

namespace sevq {

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"grid_h", c.grid_h},
                     {"grid_w", c.grid_w},
                     {"feature_channels", c.feature_channels},
                     {"token_dim", c.token_dim},
                     {"depth", c.depth},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"map_head_blocks", c.map_head_blocks},
                     {"output_side", c.output_side},
                     {"backbone", c.backbone},
                     {"head_bias_init", c.head_bias_init}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.grid_h = j.value("grid_h", c.grid_h);
  c.grid_w = j.value("grid_w", c.grid_w);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.token_dim = j.value("token_dim", c.token_dim);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.map_head_blocks = j.value("map_head_blocks", c.map_head_blocks);
  c.output_side = j.value("output_side", c.output_side);
  c.backbone = j.value("backbone", c.backbone);
  c.head_bias_init = j.value("head_bias_init", c.head_bias_init);
}

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
  j = nlohmann::json{{"target_side", c.target_side}, {"blur_kernel", c.blur_kernel}, {"standardize", c.standardize}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
  c.target_side = j.value("target_side", c.target_side);
  c.blur_kernel = j.value("blur_kernel", c.blur_kernel);
  c.standardize = j.value("standardize", c.standardize);
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = nlohmann::json{{"side", c.side},
                     {"min_blobs", c.min_blobs},
                     {"max_blobs", c.max_blobs},
                     {"blob_radius", c.blob_radius},
                     {"contrast", c.contrast},
                     {"noise_sigma", c.noise_sigma}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  c.side = j.value("side", c.side);
  c.min_blobs = j.value("min_blobs", c.min_blobs);
  c.max_blobs = j.value("max_blobs", c.max_blobs);
  c.blob_radius = j.value("blob_radius", c.blob_radius);
  c.contrast = j.value("contrast", c.contrast);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"preprocess", c.preprocess},
                     {"learning_rate", c.learning_rate},
                     {"momentum", c.momentum},
                     {"batch_size", c.batch_size},
                     {"total_steps", c.total_steps},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"ensemble_steps", c.ensemble_steps},
                     {"pseudo_label_weight", c.pseudo_label_weight},
                     {"hard_pseudo_labels", c.hard_pseudo_labels},
                     {"hard_threshold", c.hard_threshold},
                     {"num_threads", c.num_threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("preprocess")) from_json(j.at("preprocess"), c.preprocess);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.ensemble_steps = j.value("ensemble_steps", c.ensemble_steps);
  c.pseudo_label_weight = j.value("pseudo_label_weight", c.pseudo_label_weight);
  c.hard_pseudo_labels = j.value("hard_pseudo_labels", c.hard_pseudo_labels);
  c.hard_threshold = j.value("hard_threshold", c.hard_threshold);
  c.num_threads = j.value("num_threads", c.num_threads);
}

}  // namespace sevq
