#pragma once

// The gradient suite: every differentiable op and each composite block, each
// checked against central differences of its f64 oracle.

#include <string>
#include <vector>

#include "numis/trainer.hpp"
#include "reference.hpp"

namespace numis::reference {

struct GradientCase {
  std::string name;
  GradientReport report;
};

inline std::vector<GradientCase> run_gradient_suite(std::uint64_t seed = 11) {
  namespace ref = numis::reference;
  std::mt19937_64 rng(seed);
  std::vector<GradientCase> out;
  auto run = [&](std::string name, std::vector<Tensor> inputs, const EngineFn& engine, const ReferenceFn& oracle) {
    out.push_back({std::move(name), check_gradients(inputs, engine, oracle, rng())});
  };
  auto rt = [&](Shape s, double lo = -1.0, double hi = 1.0, double gap = 0.0) {
    return random_tensor(std::move(s), rng, lo, hi, gap);
  };

  run("matmul", {rt({3, 4}), rt({4, 2})},
      [](const auto& t) { return numis::matmul(t[0], t[1]); },
      [](const auto& a) { return ref::matmul(a[0], a[1]); });
  run("transpose", {rt({3, 5})},
      [](const auto& t) { return numis::transpose(t[0]); },
      [](const auto& a) { return ref::transpose(a[0]); });
  run("reshape", {rt({2, 6})},
      [](const auto& t) { return numis::reshape(t[0], {3, 4}); },
      [](const auto& a) { return ref::reshape(a[0], {3, 4}); });
  run("add", {rt({3, 4}), rt({3, 4})},
      [](const auto& t) { return numis::add(t[0], t[1]); },
      [](const auto& a) { return ref::add(a[0], a[1]); });
  run("sub", {rt({3, 4}), rt({3, 4})},
      [](const auto& t) { return numis::sub(t[0], t[1]); },
      [](const auto& a) { return ref::sub(a[0], a[1]); });
  run("mul", {rt({3, 4}), rt({3, 4})},
      [](const auto& t) { return numis::mul(t[0], t[1]); },
      [](const auto& a) { return ref::mul(a[0], a[1]); });
  run("scale", {rt({3, 4})},
      [](const auto& t) { return numis::scale(t[0], -1.7F); },
      [](const auto& a) { return ref::scale(a[0], double(-1.7F)); });
  run("add_bias", {rt({2, 3, 4}), rt({4})},
      [](const auto& t) { return numis::add_bias(t[0], t[1]); },
      [](const auto& a) { return ref::add_bias(a[0], a[1]); });
  run("relu", {rt({4, 5}, -1.0, 1.0, 0.05)},
      [](const auto& t) { return numis::relu(t[0]); },
      [](const auto& a) { return ref::relu(a[0]); });
  run("gelu", {rt({4, 5}, -3.0, 3.0)},
      [](const auto& t) { return numis::gelu(t[0]); },
      [](const auto& a) { return ref::gelu(a[0]); });
  run("sigmoid", {rt({4, 5}, -4.0, 4.0)},
      [](const auto& t) { return numis::sigmoid(t[0]); },
      [](const auto& a) { return ref::sigmoid(a[0]); });
  run("sum", {rt({3, 4})},
      [](const auto& t) { return numis::sum(t[0]); },
      [](const auto& a) { return ref::sum(a[0]); });
  run("mean", {rt({3, 4})},
      [](const auto& t) { return numis::mean(t[0]); },
      [](const auto& a) { return ref::mean(a[0]); });
  run("softmax_rows", {rt({3, 5}, -2.0, 2.0)},
      [](const auto& t) { return numis::softmax_rows(t[0]); },
      [](const auto& a) { return ref::softmax_rows(a[0]); });
  run("layer_norm", {rt({3, 6}, -2.0, 2.0), rt({6}, 0.5, 1.5), rt({6})},
      [](const auto& t) { return numis::layer_norm(t[0], t[1], t[2]); },
      [](const auto& a) { return ref::layer_norm(a[0], a[1], a[2]); });
  run("slice_rows", {rt({5, 3})},
      [](const auto& t) { return numis::slice_rows(t[0], 1, 3); },
      [](const auto& a) { return ref::slice_rows(a[0], 1, 3); });
  run("slice_cols", {rt({3, 5})},
      [](const auto& t) { return numis::slice_cols(t[0], 2, 2); },
      [](const auto& a) { return ref::slice_cols(a[0], 2, 2); });
  run("concat_rows", {rt({1, 3}), rt({2, 3})},
      [](const auto& t) { return numis::concat_rows({t[0], t[1]}); },
      [](const auto& a) { return ref::concat_rows({a[0], a[1]}); });
  run("concat_cols", {rt({3, 2}), rt({3, 1}), rt({3, 2})},
      [](const auto& t) { return numis::concat_cols({t[0], t[1], t[2]}); },
      [](const auto& a) { return ref::concat_cols({a[0], a[1], a[2]}); });
  run("scaled_dot_attention", {rt({4, 3}), rt({4, 3}), rt({4, 2})},
      [](const auto& t) { return numis::scaled_dot_attention(t[0], t[1], t[2]); },
      [](const auto& a) { return ref::attention(a[0], a[1], a[2]); });
  run("conv2d", {rt({2, 5, 5}), rt({3, 2, 3, 3}), rt({3})},
      [](const auto& t) { return numis::conv2d(t[0], t[1], t[2], 1, 1); },
      [](const auto& a) { return ref::conv2d(a[0], a[1], a[2], 1, 1); });
  run("conv2d_strided", {rt({2, 6, 6}), rt({2, 2, 3, 3}), rt({2})},
      [](const auto& t) { return numis::conv2d(t[0], t[1], t[2], 2, 0); },
      [](const auto& a) { return ref::conv2d(a[0], a[1], a[2], 2, 0); });
  run("max_pool2d", {rt({2, 4, 5})},
      [](const auto& t) { return numis::max_pool2d(t[0], 2); },
      [](const auto& a) { return ref::max_pool2d(a[0], 2); });
  run("patchify", {rt({4, 4})},
      [](const auto& t) { return numis::patchify(t[0], 2); },
      [](const auto& a) { return ref::patchify(a[0], 2); });

  {
    std::vector<Tensor> in{rt({3, 4})};
    for (int i = 0; i < 4; ++i) {
      in.push_back(rt({4, 4}));
      in.push_back(rt({4}));
    }
    run("multi_head_self_attention", in,
        [](const auto& t) {
          const AttentionWeights w{{t[1], t[2]}, {t[3], t[4]}, {t[5], t[6]}, {t[7], t[8]}};
          return numis::multi_head_self_attention(t[0], w, 2);
        },
        [](const auto& a) { return ref::msa(a[0], std::span(a).subspan(1, 8), 2); });
  }
  {
    const std::size_t d = 8, ff = 16;
    std::vector<Tensor> in{rt({3, d}), rt({d}, 0.5, 1.5), rt({d}, -0.2, 0.2)};
    for (int i = 0; i < 4; ++i) {
      in.push_back(rt({d, d}, -0.5, 0.5));
      in.push_back(rt({d}, -0.2, 0.2));
    }
    in.push_back(rt({d}, 0.5, 1.5));
    in.push_back(rt({d}, -0.2, 0.2));
    in.push_back(rt({d, ff}, -0.5, 0.5));
    in.push_back(rt({ff}, -0.2, 0.2));
    in.push_back(rt({ff, d}, -0.5, 0.5));
    in.push_back(rt({d}, -0.2, 0.2));
    run("encoder_block", in,
        [](const auto& t) {
          EncoderBlock b;
          b.norm1_gain = t[1];
          b.norm1_bias = t[2];
          b.attention = {{t[3], t[4]}, {t[5], t[6]}, {t[7], t[8]}, {t[9], t[10]}};
          b.norm2_gain = t[11];
          b.norm2_bias = t[12];
          b.ff_in = {t[13], t[14]};
          b.ff_out = {t[15], t[16]};
          return numis::encoder_block(t[0], b, 2);
        },
        [](const auto& a) { return ref::encoder_block(a[0], std::span(a).subspan(1, 16), 2); });
  }
  run("cnn_block", {rt({2, 6, 6}), rt({3, 2, 3, 3}), rt({3}, -0.1, 0.1)},
      [](const auto& t) { return numis::max_pool2d(numis::relu(numis::conv2d(t[0], t[1], t[2], 1, 1)), 2); },
      [](const auto& a) { return ref::max_pool2d(ref::relu(ref::conv2d(a[0], a[1], a[2], 1, 1)), 2); });

  {
    static const std::vector<std::uint8_t> labels{1, 0, 1, 0, 1};
    static const std::vector<double> weights{3.0, 1.0, 0.5, 2.0, 1.0};
    BceLossSpec spec;
    spec.positive_weights = weights;
    run("bce_through_sigmoid", {rt({5}, -3.0, 3.0)},
        [spec](const auto& t) { return numis::bce_loss(numis::sigmoid(t[0]), labels, spec); },
        [](const auto& a) {
          const Array p = ref::sigmoid(a[0]);
          return Array({1}, {ref::bce(p.v, labels, weights)});
        });
    run("bce_with_logits", {rt({5}, -3.0, 3.0)},
        [spec](const auto& t) { return numis::bce_with_logits(t[0], labels, spec); },
        [](const auto& a) {
          const Array p = ref::sigmoid(a[0]);
          return Array({1}, {ref::bce(p.v, labels, weights)});
        });
  }
  run("cross_entropy", {rt({2}, -3.0, 3.0)},
      [](const auto& t) { return numis::cross_entropy(t[0], 1); },
      [](const auto& a) { return Array({1}, {ref::cross_entropy(a[0].v, 1)}); });

  {
    ViTConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.depth = 2;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.num_labels = 3;
    auto model = std::make_shared<ViTModel>(c, rng());
    // Spread the small default init so every path carries a visible gradient.
    std::vector<Tensor> params;
    for (auto& p : model->parameters()) {
      std::uniform_real_distribution<double> dist(-0.5, 0.5);
      if (p.name.find("norm") == std::string::npos)
        for (auto& v : p.tensor.mutable_data()) v += static_cast<float>(dist(rng));
      params.push_back(p.tensor);
    }
    const Tensor image = random_tensor({8, 8}, rng, 0.0, 1.0, 0.0, false);
    run("vit_forward", params,
        [model, image](const auto&) { return model->forward(image); },
        [c, image](const auto& a) { return ref::vit_forward(c, to_array(image), a); });
  }
  {
    CnnConfig c;
    c.input_size = 8;
    c.conv_blocks = {{3}, {4}};
    c.fc_widths = {6};
    auto model = std::make_shared<CnnModel>(c, rng());
    std::vector<Tensor> params;
    for (auto& p : model->parameters()) params.push_back(p.tensor);
    const Tensor image = random_tensor({8, 8}, rng, 0.0, 1.0, 0.0, false);
    run("cnn_forward", params,
        [model, image](const auto&) { return model->forward(image); },
        [c, image](const auto& a) { return ref::cnn_forward(c, to_array(image), a); });
  }
  return out;
}

}  // namespace numis::reference
