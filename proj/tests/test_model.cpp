#include <gtest/gtest.h>

#include <cmath>

#include "swtr/grad_check.hpp"
#include "swtr/losses.hpp"
#include "swtr/model.hpp"
#include "test_util.hpp"

using namespace swtr;
using swtr::testing::random_tensor;

namespace {

SwtrConfig tiny_config() {
  SwtrConfig c = toy_config();
  c.input_height = c.input_width = 32;
  c.d_model = 12;
  c.heads = 3;
  c.num_transformer_layers = 2;
  c.encoder_channels = {4, 6, 8, 10};
  c.decoder_channels = {8, 6, 4, 4};
  c.window_size = 2;
  return c;
}

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

// Closed-form parameter count, written out stage by stage.
std::size_t expected_parameter_count(const SwtrConfig& c) {
  const auto& e = c.encoder_channels;
  const auto& dc = c.decoder_channels;
  std::size_t n = conv_params(c.in_channels, e[0], 7);
  const std::size_t strides[3] = {1, 2, 2};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t b = 0; b < c.blocks_per_stage; ++b) {
      const std::size_t in = b == 0 ? e[s] : e[s + 1], out = e[s + 1];
      n += conv_params(in, out, 3) + conv_params(out, out, 3);
      if (in != out || (b == 0 && strides[s] != 1)) n += conv_params(in, out, 1);
    }
  const std::size_t d = c.d_model, r = c.mlp_ratio;
  n += e[3] * d + d;
  const std::size_t span = 2 * c.window_size - 1;
  const std::size_t per_block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + (c.rel_pos_bias ? span * span * c.heads : 0) +
                                2 * d + (d * r * d + r * d) + (r * d * d + d);
  n += c.num_transformer_layers * per_block + 2 * d;
  const std::size_t skip_ch[3] = {e[2], e[1], e[0]};
  std::size_t in = d;
  for (std::size_t i = 0; i < 4; ++i) {
    n += conv_params(in + (i < c.num_skip_connections ? skip_ch[i] : 0), dc[i], 3);
    in = dc[i];
  }
  return n + conv_params(in, c.num_classes, 1);
}

}  // namespace

TEST(Build, DefaultBottleneckIs14x14AndShapesMatch) {
  SwtrModel<float> m(SwtrConfig{});
  auto tr = m.forward_trace(random_tensor<float>({1, 1, 224, 224}, 1));
  EXPECT_EQ(tr.bottleneck.height, 14u);
  EXPECT_EQ(tr.bottleneck.width, 14u);
  EXPECT_EQ(tr.logits.shape(), (Shape{1, 3, 224, 224}));
  for (float v : tr.logits.vec()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Build, ParameterCountMatchesClosedForm) {
  for (std::size_t skips = 0; skips <= 3; ++skips) {
    SwtrConfig c;
    c.num_skip_connections = skips;
    SwtrModel<float> m(c);
    EXPECT_EQ(m.parameters().total_elements(), expected_parameter_count(c)) << "skips=" << skips;
  }
  SwtrConfig c = toy_config();
  c.blocks_per_stage = 2;
  EXPECT_EQ(SwtrModel<float>(c).parameters().total_elements(), expected_parameter_count(c));
}

TEST(Build, SameSeedSameChecksumDifferentSeedDiffers) {
  SwtrConfig c = tiny_config();
  const auto a = parameter_checksum(SwtrModel<float>(c).parameters());
  EXPECT_EQ(a, parameter_checksum(SwtrModel<float>(c).parameters()));
  c.seed = 2;
  EXPECT_NE(a, parameter_checksum(SwtrModel<float>(c).parameters()));
}

TEST(Build, InvalidConfigsRejected) {
  SwtrConfig c = tiny_config();
  c.input_height = 30;
  EXPECT_THROW(SwtrModel<float>{c}, Error);
  c = tiny_config();
  c.num_transformer_layers = 3;
  EXPECT_THROW(SwtrModel<float>{c}, Error);
  c = tiny_config();
  c.heads = 5;
  EXPECT_THROW(SwtrModel<float>{c}, Error);
  c = tiny_config();
  c.num_skip_connections = 4;
  EXPECT_THROW(SwtrModel<float>{c}, Error);
}

TEST(Forward, SkipCountChangesValuesNotShape) {
  auto x = random_tensor<float>({2, 1, 32, 32}, 2);
  std::vector<float> prev;
  for (std::size_t k = 0; k <= 3; ++k) {
    SwtrConfig c = tiny_config();
    c.num_skip_connections = k;
    SwtrModel<float> m(c);
    auto y = m.forward(x);
    EXPECT_EQ(y.shape(), (Shape{2, 3, 32, 32}));
    if (k > 0) {
      EXPECT_NE(y.vec(), prev);
    }
    prev = y.vec();
  }
}

TEST(Forward, OutputSizeEqualsInputSize) {
  for (std::size_t side : {16u, 48u, 64u}) {
    SwtrConfig c = tiny_config();
    c.input_height = side;
    c.input_width = 2 * side;
    SwtrModel<float> m(c);
    EXPECT_EQ(m.forward(random_tensor<float>({1, 1, side, 2 * side}, side)).shape(), (Shape{1, 3, side, 2 * side}));
  }
}

TEST(Forward, WrongInputShapeIsDimensionError) {
  SwtrModel<float> m(tiny_config());
  try {
    m.forward(Tensor<float>::zeros({1, 1, 16, 32}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }
}

TEST(Forward, ZeroHeadGivesUniformSoftmax) {
  SwtrModel<float> m(tiny_config());
  auto head = m.head();
  std::fill(head.weight.vec().begin(), head.weight.vec().end(), 0.0f);
  std::fill(head.bias.vec().begin(), head.bias.vec().end(), 0.0f);
  auto p = softmax(m.forward(random_tensor<float>({1, 1, 32, 32}, 3)), 1);
  for (float v : p.vec()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7);
}

TEST(Forward, SameSeedBitIdentical) {
  auto x = random_tensor<float>({2, 1, 32, 32}, 4);
  EXPECT_EQ(SwtrModel<float>(tiny_config()).forward(x).vec(), SwtrModel<float>(tiny_config()).forward(x).vec());
}

TEST(Forward, BottleneckEquivariantToWindowMultipleRolls) {
  SwtrConfig c = tiny_config();
  c.rel_pos_bias = false;
  c.shift_mask = false;
  c.num_transformer_layers = 4;
  c.window_size = 3;
  SwtrModel<double> m(c);
  TokenGrid<double> g{random_tensor<double>({1, 36, c.d_model}, 5), 6, 6};
  auto a = m.run_transformer(cyclic_shift(g, 3));
  auto b = cyclic_shift(m.run_transformer(g), 3);
  for (std::size_t i = 0; i < a.tokens.size(); ++i) EXPECT_NEAR(a.tokens.vec()[i], b.tokens.vec()[i], 1e-10);
}

TEST(Gradients, ReachEveryParameter) {
  // 4x4 bottleneck so that shifted windows keep unmasked neighbours.
  SwtrConfig c = tiny_config();
  c.input_height = c.input_width = 64;
  SwtrModel<float> m(c);
  auto x = random_tensor<float>({2, 1, 64, 64}, 6);
  std::vector<std::uint8_t> labels(2 * 64 * 64);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>((i / 7) % 3);
  m.parameters().zero_grad();
  backward(dice_ce_loss(m.forward(x), std::span<const std::uint8_t>(labels)));
  for (const auto& [name, t] : m.parameters().items()) {
    bool nonzero = false;
    for (float g : t.grad()) nonzero |= g != 0.0f;
    EXPECT_TRUE(nonzero) << name;
  }
}

TEST(Gradients, EndToEndSpotCheckF32) {
  SwtrModel<float> m(tiny_config());
  auto x = random_tensor<float>({1, 1, 32, 32}, 7);
  std::vector<std::uint8_t> labels(32 * 32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>((i / 5) % 3);
  std::vector<Tensor<float>> inputs;
  for (const auto& [_, t] : m.parameters().items()) inputs.push_back(t);
  const auto r = grad_check<float>([&] { return dice_ce_loss(m.forward(x), std::span<const std::uint8_t>(labels)); },
                                   inputs, 1e-2, 10, 8);
  EXPECT_TRUE(r.ok(1e-3)) << r.max_rel_error;
}

TEST(Gradients, EndToEndSpotCheckF64) {
  SwtrModel<double> m(tiny_config());
  auto x = random_tensor<double>({1, 1, 32, 32}, 9);
  std::vector<std::uint8_t> labels(32 * 32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>((i / 3) % 3);
  std::vector<Tensor<double>> inputs;
  for (const auto& [_, t] : m.parameters().items()) inputs.push_back(t);
  const auto r = grad_check<double>([&] { return dice_ce_loss(m.forward(x), std::span<const std::uint8_t>(labels)); },
                                    inputs, 1e-5, 10, 10);
  EXPECT_TRUE(r.ok(1e-5)) << r.max_rel_error;
}

TEST(Predict, UniformLogitsTieToLowestClass) {
  auto logits = Tensor<float>::zeros({1, 3, 2, 2});
  for (auto v : argmax_classes(logits, 0)) EXPECT_EQ(v, 0);
}

TEST(Predict, SingleSliceVolume) {
  SwtrModel<float> m(tiny_config());
  VolumeImage v({32, 32, 1}, {1, 1, 1}, Modality::kMR, 0.5f);
  auto mask = predict_mask(m, v);
  EXPECT_EQ(mask.dims, v.dims);
  for (auto l : mask.data) EXPECT_LE(l, 2);
}

TEST(Predict, BatchSizeDoesNotChangeResult) {
  SwtrModel<float> m(tiny_config());
  VolumeImage v({32, 32, 5}, {1, 1, 1}, Modality::kMR);
  auto r = random_tensor<float>({v.data.size()}, 11);
  v.data = r.vec();
  EXPECT_EQ(predict_mask(m, v, 1).data, predict_mask(m, v, 8).data);
}

TEST(Predict, SliceSizeMismatchIsDimensionError) {
  SwtrModel<float> m(tiny_config());
  VolumeImage v({16, 32, 1}, {1, 1, 1}, Modality::kMR);
  try {
    predict_mask(m, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }
}
