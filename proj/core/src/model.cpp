#include "sevq/model.hpp"

#include <cmath>
#include <numeric>

#include "sevq/errors.hpp"

namespace sevq {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.grid_h = c.grid_w = 16;
  c.feature_channels = 1024;
  c.token_dim = 768;
  c.depth = 12;
  c.heads = 12;
  c.map_head_blocks = 4;
  c.output_side = 256;
  return c;
}

int ModelConfig::head_channels(int i) const noexcept { return std::max(8, token_dim >> (i + 1)); }

void ModelConfig::validate() const {
  if (grid_h < 1 || grid_w < 1) throw ValidationError("ModelConfig: grid must be positive");
  if (grid_h != grid_w) throw ValidationError("ModelConfig: only square token grids are supported");
  if (feature_channels < 1 || token_dim < 1 || mlp_ratio < 1)
    throw ValidationError("ModelConfig: channel counts must be positive");
  if (depth < 0) throw ValidationError("ModelConfig: depth must be >= 0");
  if (heads < 1 || token_dim % heads != 0) throw ValidationError("ModelConfig: token_dim must be divisible by heads");
  if (map_head_blocks < 0 || map_head_blocks > 16) throw ValidationError("ModelConfig: bad map_head_blocks");
  if (output_side != grid_h * (1 << map_head_blocks))
    throw ValidationError("ModelConfig: output_side must equal grid_h * 2^map_head_blocks");
}

struct Model::Trace {
  struct Head {
    nn::Conv2d::Cache conv;
    nn::GroupNorm::Cache norm;
    nn::FeatureMap activation;
  };

  std::unique_ptr<BackboneCache> backbone;
  nn::Matrix token_in;  ///< (H'W') x C'
  std::vector<nn::EncoderBlock::Cache> blocks;
  std::vector<Head> head;
  nn::Conv2d::Cache out_conv;
  ProbabilityMap sigmoid;  ///< pre-mask map head output
  LungMask mask;
  ModelOutput output;
};

Model::Model(ModelConfig config, std::uint64_t seed, const BackboneFactory& backbone) : config_(std::move(config)) {
  config_.validate();
  nn::Rng rng(seed);
  const BackboneFactory factory = backbone ? backbone : backbone_factory(config_.backbone);
  backbone_ = factory(config_, params_, rng);
  config_.backbone = backbone_->name();

  const int d = config_.token_dim;
  token_proj_ = nn::Linear(params_, rng, "embed.proj", config_.feature_channels, d);
  cls_token_ = params_.add("embed.cls_token", 1, d);
  pos_embed_ = params_.add("embed.pos_embed", config_.num_tokens(), d);
  nn::init_normal(params_[cls_token_], 0.02, rng);
  nn::init_normal(params_[pos_embed_], 0.02, rng);

  for (int l = 0; l < config_.depth; ++l)
    blocks_.emplace_back(params_, rng, "encoder." + std::to_string(l), d, config_.heads, config_.mlp_dim());

  int in = d;
  for (int b = 0; b < config_.map_head_blocks; ++b) {
    const int out = config_.head_channels(b);
    const std::string name = "head." + std::to_string(b);
    head_.push_back(HeadBlock{nn::Conv2d(params_, rng, name + ".conv", in, out, 3, 1, 1),
                              nn::GroupNorm(params_, name + ".norm", out, std::gcd(out, 4))});
    in = out;
  }
  head_out_ = nn::Conv2d(params_, rng, "head.out", in, 1, 1, 1, 0);
  params_[head_out_.bias_id()].setConstant(config_.head_bias_init);
}

void Model::set_params(nn::ParamStore params) {
  if (!params.same_layout(params_)) throw ValidationError("Model::set_params: parameter layout mismatch");
  params_ = std::move(params);
}

void Model::validate_image(const ImageTensor& image, const LungMask& mask) const {
  if (image.rows() != config_.output_side || image.cols() != config_.output_side)
    throw ValidationError("model input must be " + std::to_string(config_.output_side) + "x" +
                          std::to_string(config_.output_side) + ", got " + std::to_string(image.rows()) + "x" +
                          std::to_string(image.cols()));
  if (!image.same_shape(mask)) throw ValidationError("image and mask dimensions differ");
  if (!is_binary(mask)) throw ValidationError("lung mask must be binary");
}

nn::FeatureMap Model::embed_features(const ImageTensor& image) const {
  if (image.rows() != config_.output_side || image.cols() != config_.output_side)
    throw ValidationError("embed_features: image side must equal output_side");
  nn::FeatureMap x(1, image.rows(), image.cols());
  x.data = Eigen::Map<const nn::Matrix>(image.data(), 1, static_cast<Eigen::Index>(image.size()));
  std::unique_ptr<BackboneCache> cache;
  nn::FeatureMap c = backbone_->forward(params_, x, cache);
  if (c.channels != config_.feature_channels || c.height != config_.grid_h || c.width != config_.grid_w)
    throw ValidationError("backbone output shape does not match the model config");
  return c;
}

nn::Matrix Model::tokenize(const nn::FeatureMap& features) const {
  if (features.channels != config_.feature_channels || features.height != config_.grid_h ||
      features.width != config_.grid_w)
    throw ValidationError("tokenize: feature grid shape does not match the model config");
  nn::Matrix z(config_.num_tokens(), config_.token_dim);
  z.row(0) = params_[cls_token_].row(0);
  z.bottomRows(features.pixels()) = token_proj_.forward(params_, features.data.transpose());
  z += params_[pos_embed_];
  return z;
}

nn::Matrix Model::transformer_encode(const nn::Matrix& tokens) const {
  if (tokens.rows() != config_.num_tokens() || tokens.cols() != config_.token_dim)
    throw ValidationError("transformer_encode: token sequence shape mismatch");
  nn::Matrix z = tokens;
  nn::EncoderBlock::Cache cache;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    z = blocks_[l].forward(params_, z, cache);
    if (!z.allFinite()) throw NumericError("non-finite activations after encoder block " + std::to_string(l));
  }
  return z;
}

ProbabilityMap Model::map_head(const nn::Matrix& encoded) const {
  if (encoded.rows() != config_.num_tokens() || encoded.cols() != config_.token_dim)
    throw ValidationError("map_head: token sequence shape mismatch");
  nn::FeatureMap x(config_.token_dim, config_.grid_h, config_.grid_w);
  x.data = encoded.bottomRows(config_.grid_h * config_.grid_w).transpose();
  for (const HeadBlock& block : head_) {
    nn::Conv2d::Cache cc;
    nn::GroupNorm::Cache nc;
    x = nn::relu(block.norm.forward(params_, block.conv.forward(params_, nn::upsample2x(x), cc), nc));
  }
  nn::Conv2d::Cache oc;
  const nn::FeatureMap logits = head_out_.forward(params_, x, oc);
  if (logits.height != config_.output_side) throw ValidationError("map_head: output side mismatch");
  ProbabilityMap map(logits.height, logits.width);
  for (Eigen::Index i = 0; i < logits.data.cols(); ++i) map[static_cast<std::size_t>(i)] = nn::sigmoid(logits.data(0, i));
  return map;
}

ModelOutput Model::forward(const ImageTensor& image, const LungMask& mask) const {
  validate_image(image, mask);
  const RegionPartition partition = count_nonzero(mask) == 0 ? RegionPartition::background(mask.rows(), mask.cols())
                                                             : build_region_partition(mask);
  return forward(image, mask, partition);
}

ModelOutput Model::forward(const ImageTensor& image, const LungMask& mask, const RegionPartition& partition) const {
  return std::move(forward_trace(image, mask, partition)->output);
}

void Model::TraceDeleter::operator()(Trace* t) const noexcept { delete t; }

Model::TracePtr Model::forward_trace(const ImageTensor& image, const LungMask& mask,
                                     const RegionPartition& partition) const {
  validate_image(image, mask);
  if (partition.rows() != mask.rows() || partition.cols() != mask.cols())
    throw ValidationError("region partition dimensions differ from the mask");
  TracePtr t(new Trace());

  nn::FeatureMap x(1, image.rows(), image.cols());
  x.data = Eigen::Map<const nn::Matrix>(image.data(), 1, static_cast<Eigen::Index>(image.size()));
  const nn::FeatureMap features = backbone_->forward(params_, x, t->backbone);
  if (features.channels != config_.feature_channels || features.height != config_.grid_h ||
      features.width != config_.grid_w)
    throw ValidationError("backbone output shape does not match the model config");

  t->token_in = features.data.transpose();
  nn::Matrix z(config_.num_tokens(), config_.token_dim);
  z.row(0) = params_[cls_token_].row(0);
  z.bottomRows(features.pixels()) = token_proj_.forward(params_, t->token_in);
  z += params_[pos_embed_];

  t->blocks.resize(blocks_.size());
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    z = blocks_[l].forward(params_, z, t->blocks[l]);
    if (!z.allFinite()) throw NumericError("non-finite activations after encoder block " + std::to_string(l));
  }

  nn::FeatureMap h(config_.token_dim, config_.grid_h, config_.grid_w);
  h.data = z.bottomRows(config_.grid_h * config_.grid_w).transpose();
  t->head.resize(head_.size());
  for (std::size_t b = 0; b < head_.size(); ++b) {
    Trace::Head& hc = t->head[b];
    h = nn::relu(head_[b].norm.forward(params_, head_[b].conv.forward(params_, nn::upsample2x(h), hc.conv), hc.norm));
    hc.activation = h;
  }
  const nn::FeatureMap logits = head_out_.forward(params_, h, t->out_conv);

  t->sigmoid = ProbabilityMap(logits.height, logits.width);
  t->output.map = ProbabilityMap(logits.height, logits.width);
  for (std::size_t i = 0; i < t->sigmoid.size(); ++i) {
    const double p = nn::sigmoid(logits.data(0, static_cast<Eigen::Index>(i)));
    if (!std::isfinite(p)) throw NumericError("non-finite probability map");
    t->sigmoid[i] = p;
    t->output.map[i] = mask[i] ? p : 0.0;
  }
  t->mask = mask;
  t->output.pooled = roi_max_pool(t->output.map, partition);
  return t;
}

const ModelOutput& Model::output(const Trace& trace) const { return trace.output; }

void Model::backward(const Trace& t, const std::array<double, kNumRegions>& grad_array, nn::ParamStore& grads) const {
  const int side = config_.output_side;
  nn::FeatureMap dlogits(1, side, side);
  for (std::size_t k = 0; k < kNumRegions; ++k) {
    const std::ptrdiff_t i = t.output.pooled.argmax[k];
    if (i < 0 || !t.mask[static_cast<std::size_t>(i)]) continue;
    const double p = t.sigmoid[static_cast<std::size_t>(i)];
    dlogits.data(0, i) += grad_array[k] * p * (1.0 - p);
  }

  nn::FeatureMap d = head_out_.backward(params_, t.out_conv, dlogits, grads);
  for (std::size_t b = head_.size(); b-- > 0;) {
    const Trace::Head& hc = t.head[b];
    d = nn::relu_backward(hc.activation, d);
    d = head_[b].norm.backward(params_, hc.norm, d, grads);
    d = head_[b].conv.backward(params_, hc.conv, d, grads);
    d = nn::upsample2x_backward(d);
  }

  nn::Matrix dz = nn::Matrix::Zero(config_.num_tokens(), config_.token_dim);
  dz.bottomRows(d.pixels()) = d.data.transpose();
  for (std::size_t l = blocks_.size(); l-- > 0;) dz = blocks_[l].backward(params_, t.blocks[l], dz, grads);

  grads[pos_embed_] += dz;
  grads[cls_token_].row(0) += dz.row(0);
  const nn::Matrix dtok = token_proj_.backward(params_, t.token_in, dz.bottomRows(config_.grid_h * config_.grid_w), grads);

  nn::FeatureMap dfeat(config_.feature_channels, config_.grid_h, config_.grid_w);
  dfeat.data = dtok.transpose();
  backbone_->backward(params_, *t.backbone, dfeat, grads);
}

}  // namespace sevq
