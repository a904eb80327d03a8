#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "../reference.hpp"
#include "numis/errors.hpp"
#include "numis/trainer.hpp"
#include "numis/vit.hpp"

using namespace numis;
namespace ref = numis::reference;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<std::vector<float>> snapshot(const ParameterList& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.push_back(values(p.tensor));
  return out;
}

Tensor random_image(std::size_t size, std::mt19937_64& rng) {
  return ref::random_tensor({size, size}, rng, 0.0, 1.0, 0.0, false);
}

}  // namespace

TEST(Patchify, PatchCountFollowsGridLaw) {
  const Tensor patches = patchify(Tensor::zeros({224, 224}), 16);
  EXPECT_EQ(patches.shape(), (Shape{196, 256}));
  EXPECT_EQ(patchify(Tensor::zeros({32, 48}), 8).shape(), (Shape{24, 64}));
}

TEST(Patchify, UnitPatchesKeepRowMajorOrder) {
  const Tensor img({2, 2}, {1, 2, 3, 4});
  const Tensor patches = patchify(img, 1);
  EXPECT_EQ(patches.shape(), (Shape{4, 1}));
  EXPECT_EQ(values(patches), values(img));
}

TEST(Patchify, FourByFourHandLayout) {
  std::vector<float> pixels(16);
  std::iota(pixels.begin(), pixels.end(), 0.0F);
  const auto out = values(patchify(Tensor({4, 4}, pixels), 2));
  EXPECT_EQ(out, (std::vector<float>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15}));
}

TEST(Patchify, IndivisibleImageThrows) { EXPECT_THROW(patchify(Tensor::zeros({10, 10}), 4), ShapeError); }

namespace {

AttentionWeights random_attention(std::size_t d, std::mt19937_64& rng) {
  auto lin = [&] { return Linear{ref::random_tensor({d, d}, rng), ref::random_tensor({d}, rng)}; };
  return {lin(), lin(), lin(), lin()};
}

ref::Array linear_ref(const ref::Array& x, const Linear& l) {
  return ref::linear(x, ref::to_array(l.weight), ref::to_array(l.bias));
}

}  // namespace

TEST(MultiHeadAttention, SingleHeadIsAttentionThenProjection) {
  std::mt19937_64 rng(3);
  const auto w = random_attention(4, rng);
  const Tensor x = ref::random_tensor({5, 4}, rng);
  const auto expected = values(w.output(scaled_dot_attention(w.query(x), w.key(x), w.value(x))));
  const auto got = values(multi_head_self_attention(x, w, 1));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-6);
}

TEST(MultiHeadAttention, SingleTokenProjectsItsValue) {
  std::mt19937_64 rng(4);
  const auto w = random_attention(4, rng);
  const Tensor x = ref::random_tensor({1, 4}, rng);
  const auto expected = linear_ref(linear_ref(ref::to_array(x), w.value), w.output);
  const auto got = values(multi_head_self_attention(x, w, 2));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected.v[i], 1e-6);
}

TEST(MultiHeadAttention, TwoHeadsMatchStraightLineReference) {
  std::mt19937_64 rng(5);
  const auto w = random_attention(4, rng);
  const Tensor x = ref::random_tensor({3, 4}, rng);
  std::vector<ref::Array> p;
  for (const Linear* l : {&w.query, &w.key, &w.value, &w.output}) {
    p.push_back(ref::to_array(l->weight));
    p.push_back(ref::to_array(l->bias));
  }
  const auto expected = ref::msa(ref::to_array(x), p, 2);
  const auto got = values(multi_head_self_attention(x, w, 2));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected.v[i], 1e-5);
}

TEST(MultiHeadAttention, HeadsMustDivideWidth) {
  std::mt19937_64 rng(6);
  EXPECT_THROW(multi_head_self_attention(Tensor::zeros({2, 4}), random_attention(4, rng), 3), ShapeError);
}

TEST(AttentionProperty, WeightsAreRowStochastic) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6, d = 1 + rng() % 5;
    Tensor weights;
    scaled_dot_attention(ref::random_tensor({n, d}, rng, -3, 3), ref::random_tensor({n, d}, rng, -3, 3),
                         ref::random_tensor({n, 2}, rng), &weights);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += weights.data()[r * n + c];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(EncoderBlock, ZeroWeightsAreIdentity) {
  std::mt19937_64 rng(8);
  Rng init(1);
  EncoderBlock block = make_encoder_block(8, 16, init);
  for (Linear* l : {&block.attention.query, &block.attention.key, &block.attention.value, &block.attention.output,
                    &block.ff_in, &block.ff_out}) {
    *l = make_linear_zero(l->in_features(), l->out_features());
  }
  const Tensor x = ref::random_tensor({5, 8}, rng);
  const Tensor y = encoder_block(x, block, 2);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(values(y), values(x));
}

TEST(EncoderBlock, OutputShapeEqualsInputShape) {
  Rng init(2);
  std::mt19937_64 rng(9);
  const EncoderBlock block = make_encoder_block(8, 16, init);
  for (std::size_t n : {1U, 2U, 7U}) EXPECT_EQ(encoder_block(ref::random_tensor({n, 8}, rng), block, 4).shape(), (Shape{n, 8}));
}

TEST(ViT, OutputLengthAndDeterminism) {
  ViTConfig c;
  c.num_labels = 5;
  const ViTModel model(c, 1);
  std::mt19937_64 rng(10);
  const Tensor img = random_image(32, rng);
  const Tensor a = model.forward(img);
  EXPECT_EQ(a.shape(), (Shape{5}));
  EXPECT_EQ(values(a), values(model.forward(img)));
  EXPECT_EQ(values(a), values(ViTModel(c, 1).forward(img)));
}

TEST(ViT, MatchesReferenceForward) {
  ViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.num_labels = 3;
  const ViTModel model(c, 2);
  std::mt19937_64 rng(11);
  const Tensor img = random_image(16, rng);
  std::vector<ref::Array> p;
  for (const auto& np : model.parameters()) p.push_back(ref::to_array(np.tensor));
  const auto expected = ref::vit_forward(c, ref::to_array(img), p);
  const auto got = values(model.forward(img));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected.v[i], 1e-5);
}

TEST(ViT, WrongImageSizeThrows) {
  const ViTModel model(ViTConfig{}, 1);
  EXPECT_THROW(model.forward(Tensor::zeros({16, 16})), ShapeError);
}

TEST(ViT, PatchPermutationWithoutPositionsKeepsLogits) {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.d_model = 16;
  c.d_ff = 32;
  ViTModel model(c, 3);
  std::fill(model.positional().mutable_data().begin(), model.positional().mutable_data().end(), 0.0F);
  std::mt19937_64 rng(12);
  const Tensor img = random_image(8, rng);
  const auto base = values(model.forward(img));
  // Every arrangement of the four 4x4 patches.
  std::vector<std::size_t> order{0, 1, 2, 3};
  std::size_t arrangements = 0;
  do {
    std::vector<float> px(64);
    for (std::size_t dst = 0; dst < 4; ++dst) {
      const std::size_t src = order[dst];
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
          px[((dst / 2) * 4 + y) * 8 + (dst % 2) * 4 + x] = img.data()[((src / 2) * 4 + y) * 8 + (src % 2) * 4 + x];
    }
    const auto got = values(model.forward(Tensor({8, 8}, px)));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], base[i], 1e-5);
    ++arrangements;
  } while (std::next_permutation(order.begin(), order.end()));
  EXPECT_EQ(arrangements, 24U);

  // With the positional table restored the arrangement matters again.
  Rng init(4);
  fill_truncated_normal(model.positional().mutable_data(), 0.5, init);
  std::vector<float> swapped(img.data().begin(), img.data().end());
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) std::swap(swapped[y * 8 + x], swapped[y * 8 + 4 + x]);
  EXPECT_NE(values(model.forward(img)), values(model.forward(Tensor({8, 8}, swapped))));
}

TEST(ViT, ReplaceHeadShapesAndIsolation) {
  ViTConfig c;
  c.num_labels = 1000;
  ViTModel model(c, 5);
  EXPECT_EQ(model.head().weight.shape(), (Shape{32, 1000}));
  const auto backbone = snapshot(model.backbone_parameters());
  model.replace_head(8, 6);
  EXPECT_EQ(model.head().weight.shape(), (Shape{32, 8}));
  EXPECT_EQ(model.head().bias.shape(), (Shape{8}));
  EXPECT_EQ(model.config().num_labels, 8U);
  EXPECT_EQ(snapshot(model.backbone_parameters()), backbone);
  for (float b : model.head().bias.data()) EXPECT_EQ(b, 0.0F);
  EXPECT_THROW(model.replace_head(0, 1), ConfigError);
}

TEST(ViT, FreezeLeavesOnlyHeadTrainable) {
  ViTModel model(ViTConfig{}, 7);
  const std::size_t full = model.trainable_parameter_count();
  EXPECT_EQ(full, model.parameter_count());
  model.replace_head(8, 1);
  model.freeze_backbone();
  EXPECT_TRUE(model.backbone_frozen());
  EXPECT_EQ(model.trainable_parameter_count(), 32U * 8U + 8U);
  for (const auto& p : model.backbone_parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
  model.unfreeze();
  EXPECT_EQ(model.trainable_parameter_count(), model.parameter_count());
}

TEST(ViT, FrozenStepChangesOnlyHead) {
  ViTModel model(ViTConfig{}, 8);
  model.freeze_backbone();
  const auto backbone = snapshot(model.backbone_parameters());
  const auto head = snapshot(model.head_parameters());
  std::mt19937_64 rng(13);
  const std::vector<std::uint8_t> labels{1, 0};
  bce_with_logits(model.forward(random_image(32, rng)), labels, {}).backward();
  SgdMomentum(0.1).step(model.parameters());
  EXPECT_EQ(snapshot(model.backbone_parameters()), backbone);
  EXPECT_NE(snapshot(model.head_parameters()), head);
}

TEST(ViT, FrozenBackboneTrainsConceptsIndependently) {
  ViTConfig c;
  c.num_labels = 3;
  ViTModel model(c, 9);
  model.freeze_backbone();
  const auto before = values(model.head().weight);
  std::mt19937_64 rng(14);
  SgdMomentum opt(0.05);
  const std::vector<std::uint8_t> label{1};
  for (int step = 0; step < 5; ++step) {
    zero_grads(model.parameters());
    const Tensor logits = reshape(model.forward(random_image(32, rng)), {1, 3});
    bce_with_logits(reshape(slice_cols(logits, 0, 1), {1}), label, {}).backward();
    opt.step(model.parameters());
  }
  const auto after = values(model.head().weight);
  for (std::size_t row = 0; row < 32; ++row) {
    EXPECT_NE(after[row * 3 + 0], before[row * 3 + 0]);
    EXPECT_EQ(after[row * 3 + 1], before[row * 3 + 1]);
    EXPECT_EQ(after[row * 3 + 2], before[row * 3 + 2]);
  }
}

TEST(ViT, CloneSharesNoStorage) {
  ViTModel model(ViTConfig{}, 10);
  ViTModel copy = model.clone();
  copy.head().bias.mutable_data()[0] = 42.0F;
  EXPECT_NE(model.head().bias.data()[0], 42.0F);
}

TEST(ViT, LargeConfigIsRepresentable) {
  const ViTConfig large = ViTConfig::large16(8);
  EXPECT_NO_THROW(large.validate());
  EXPECT_EQ(large.num_patches(), 196U);
  EXPECT_EQ(large.patch_dim(), 256U);
}

TEST(ViT, ConfigJsonRoundTrip) {
  ViTConfig c;
  c.depth = 3;
  c.heads = 4;
  const nlohmann::json j = c;
  const auto back = j.get<ViTConfig>();
  EXPECT_EQ(back.depth, 3U);
  EXPECT_EQ(back.heads, 4U);
  ViTConfig bad;
  bad.heads = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
}
