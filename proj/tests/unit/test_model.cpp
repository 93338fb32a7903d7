#include <numeric>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sevq/errors.hpp"
#include "sevq/model.hpp"
#include "sevq/synthetic.hpp"
#include "sevq/training.hpp"
#include "test_support.hpp"

using namespace sevq;

namespace {

ModelConfig mini_config() {
  ModelConfig c;
  c.grid_h = c.grid_w = 4;
  c.feature_channels = 8;
  c.token_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.map_head_blocks = 2;
  c.output_side = 16;
  return c;
}

TrainingSample synthetic_sample(std::uint64_t seed, int side) {
  SyntheticConfig sc;
  sc.side = std::max(side, 32);
  sc.blob_radius = 2.0;
  const auto c = generate_synthetic_case(seed, sc);
  PreprocessConfig pc;
  pc.target_side = std::max(side, 32);
  auto s = make_training_sample("s" + std::to_string(seed), c.image, c.mask, pc, c.label);
  if (side < 32) {
    // Below the preprocessing minimum: resample the conditioned image directly.
    s.image = resize_bilinear(s.image, side, side);
    s.mask = resize_mask(c.mask, side);
    s.partition = build_region_partition(s.mask);
  }
  return s;
}

nn::Matrix permute_tokens(const nn::Matrix& z, const std::vector<int>& perm) {
  nn::Matrix out = z;
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i) + 1) = z.row(perm[i] + 1);
  return out;
}

}  // namespace

TEST_CASE("desk config stage shapes") {
  const Model model(ModelConfig::desk(), 1);
  std::mt19937_64 rng(1);
  const auto img = testing::random_image(rng, 64, 64);
  const auto f = model.embed_features(img);
  CHECK(f.height == 8);
  CHECK(f.width == 8);
  CHECK(f.channels == 32);
  const auto z = model.tokenize(f);
  CHECK(z.rows() == 65);
  CHECK(z.cols() == 64);
  const auto e = model.transformer_encode(z);
  CHECK(e.rows() == 65);
  CHECK(e.cols() == 64);
  const auto map = model.map_head(e);
  CHECK(map.rows() == 64);
  CHECK(map.cols() == 64);
  for (double v : map.values()) REQUIRE((v >= 0.0 && v <= 1.0));
  CHECK_THROWS_AS(model.embed_features(testing::random_image(rng, 32, 32)), ValidationError);
}

TEST_CASE("full-scale config stage shapes") {
  const Model model(ModelConfig::full_scale(), 1);
  std::mt19937_64 rng(2);
  const auto f = model.embed_features(testing::random_image(rng, 256, 256));
  CHECK(f.height == 16);
  CHECK(f.width == 16);
  CHECK(f.channels == 1024);
  const auto z = model.tokenize(f);
  CHECK(z.rows() == 257);
  CHECK(z.cols() == 768);
  const auto e = model.transformer_encode(z);
  CHECK(e.rows() == 257);
  CHECK(e.cols() == 768);
  const auto map = model.map_head(e);
  CHECK(map.rows() == 256);
  CHECK(map.cols() == 256);
}

TEST_CASE("config validation") {
  auto c = ModelConfig::desk();
  c.output_side = 32;
  CHECK_THROWS_AS(Model{c}, ValidationError);
  c = ModelConfig::desk();
  c.heads = 3;
  CHECK_THROWS_AS(Model{c}, ValidationError);
  c = ModelConfig::desk();
  c.backbone = "densenet121";
  CHECK_THROWS_AS(Model{c}, ValidationError);
}

TEST_CASE("zero features with zero positional embedding give the projection bias") {
  Model model(ModelConfig::desk(), 3);
  const int bias = *model.params().find("embed.proj.bias");
  nn::init_normal(model.params()[bias], 1.0, *std::make_unique<nn::Rng>(4));
  model.params()[model.positional_embedding_id()].setZero();
  nn::FeatureMap zero(32, 8, 8);
  const auto z = model.tokenize(zero);
  for (Eigen::Index t = 1; t < z.rows(); ++t) REQUIRE(z.row(t) == model.params()[bias].row(0));
  CHECK(z.row(0) == model.params()[model.class_token_id()].row(0));
}

TEST_CASE("depth 0 encoder is the identity") {
  auto c = ModelConfig::desk();
  c.depth = 0;
  const Model model(c, 5);
  nn::Rng rng(5);
  nn::Matrix z(65, 64);
  nn::init_normal(z, 1.0, rng);
  CHECK(model.transformer_encode(z) == z);
}

TEST_CASE("token symmetry: permuting non-class tokens permutes encoder outputs") {
  Model model(ModelConfig::desk(), 6);
  model.params()[model.positional_embedding_id()].setZero();
  std::mt19937_64 rng(6);
  const auto f = model.embed_features(testing::random_image(rng, 64, 64));
  std::vector<int> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  nn::FeatureMap fp = f;
  for (int i = 0; i < 64; ++i) fp.data.col(i) = f.data.col(perm[static_cast<std::size_t>(i)]);
  const auto out = model.transformer_encode(model.tokenize(f));
  const auto out_p = model.transformer_encode(model.tokenize(fp));
  CHECK((out_p - permute_tokens(out, perm)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward is deterministic and independent of other samples") {
  const Model model(ModelConfig::desk(), 7);
  const auto a = synthetic_sample(1, 64);
  const auto b = synthetic_sample(2, 64);
  const auto first = model.forward(a.image, a.mask);
  model.forward(b.image, b.mask);
  const auto again = model.forward(a.image, a.mask);
  CHECK(first.map == again.map);
  CHECK(first.pooled.array == again.pooled.array);
  const Model twin(ModelConfig::desk(), 7);
  CHECK(twin.forward(a.image, a.mask).map == first.map);
  CHECK(twin.embed_features(a.image).data == model.embed_features(a.image).data);
}

TEST_CASE("map is zero outside the mask and pooling matches the oracle") {
  std::mt19937_64 rng(8);
  const Model model(ModelConfig::desk(), 8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto mask = testing::random_mask(rng, 64);
    const auto img = testing::random_image(rng, 64, 64);
    const auto out = model.forward(img, mask);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) REQUIRE(out.map[i] == 0.0);
      REQUIRE((out.map[i] >= 0.0 && out.map[i] <= 1.0));
    }
    // Masking idempotence.
    ProbabilityMap twice = out.map;
    for (std::size_t i = 0; i < mask.size(); ++i) twice[i] *= mask[i];
    CHECK(twice == out.map);
    const auto regions = oracle::classify_regions(mask);
    CHECK(out.pooled.array.values == oracle::region_max(out.map, *regions));
    for (int k = 0; k < 6; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      REQUIRE_FALSE(out.pooled.empty[ks]);
      const auto at = static_cast<std::size_t>(out.pooled.argmax[ks]);
      CHECK(mask[at] == 1);
      CHECK(out.map[at] == out.pooled.array.values[ks]);
    }
  }
}

TEST_CASE("all-zero mask gives a zero map and flagged zero array") {
  const Model model(ModelConfig::desk(), 9);
  std::mt19937_64 rng(9);
  const auto out = model.forward(testing::random_image(rng, 64, 64), LungMask(64, 64, 0));
  for (double v : out.map.values()) REQUIRE(v == 0.0);
  for (int k = 0; k < 6; ++k) {
    CHECK(out.pooled.array.values[static_cast<std::size_t>(k)] == 0.0);
    CHECK(out.pooled.empty[static_cast<std::size_t>(k)]);
  }
}

TEST_CASE("forward validates shapes") {
  const Model model(ModelConfig::desk(), 10);
  CHECK_THROWS_AS(model.forward(ImageTensor(64, 64, 0.0), LungMask(32, 32, 1)), ValidationError);
  CHECK_THROWS_AS(model.forward(ImageTensor(32, 32, 0.0), LungMask(32, 32, 1)), ValidationError);
}

TEST_CASE("copies are independent") {
  Model a(ModelConfig::desk(), 11);
  Model b = a;
  CHECK(a.params() == b.params());
  b.params()[0](0, 0) += 1.0;
  CHECK_FALSE(a.params() == b.params());
}

TEST_CASE("a custom backbone can be injected") {
  struct Flat final : FeatureExtractor {
    std::string name() const override { return "flat"; }
    nn::FeatureMap forward(const nn::ParamStore&, const nn::FeatureMap&, std::unique_ptr<BackboneCache>&) const override {
      return nn::FeatureMap(32, 8, 8);
    }
    void backward(const nn::ParamStore&, const BackboneCache&, const nn::FeatureMap&, nn::ParamStore&) const override {}
  };
  const Model model(ModelConfig::desk(), 12, [](const ModelConfig&, nn::ParamStore&, nn::Rng&) {
    return std::make_shared<const Flat>();
  });
  CHECK(model.backbone().name() == "flat");
  CHECK(model.config().backbone == "flat");
  std::mt19937_64 rng(12);
  const auto a = model.embed_features(testing::random_image(rng, 64, 64));
  CHECK(a.data.isZero());
}

TEST_CASE("end-to-end gradient check on a 16x16 mini config") {
  Model model(mini_config(), 13);
  const auto s = synthetic_sample(13, 16);
  const auto target = SeverityArray::binary({1, 0, 0, 1, 1, 0});
  const auto result = testing::model_gradient_check(model, s, target, 60, 13);
  INFO("worst ", result.worst_parameter, " rel ", result.max_rel_error);
  CHECK(result.checked == 60);
  CHECK(result.max_rel_error < 1e-3);
}

TEST_CASE("gradient check over every token-dimension tensor") {
  Model model(mini_config(), 14);
  const auto s = synthetic_sample(14, 16);
  const auto target = SeverityArray::binary({0, 1, 1, 0, 0, 1});
  const auto trace = model.forward_trace(s.image, s.mask, s.partition);
  nn::ParamStore grads = model.params().zeros_like();
  model.backward(*trace, bce_gradient(model.output(*trace).pooled.array, target), grads);
  auto loss = [&] {
    return bce_loss(model.forward(s.image, s.mask, s.partition).pooled.array, target);
  };
  for (const char* name : {"embed.cls_token", "embed.pos_embed", "encoder.0.attn.qkv.weight", "encoder.1.mlp.fc2.bias"}) {
    const int id = *model.params().find(name);
    for (Eigen::Index e = 0; e < std::min<Eigen::Index>(model.params()[id].size(), 40); ++e) {
      const double fd = oracle::central_difference(loss, model.params()[id].data()[e], 1e-5);
      const double an = grads[id].data()[e];
      INFO(name, "[", e, "] fd ", fd, " analytic ", an);
      REQUIRE(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-7}) < 1e-3);
    }
  }
}
