// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cycleseg/errors.hpp"
#include "cycleseg/layers.hpp"
#include "cycleseg/ops.hpp"
#include "oracle.hpp"

using namespace cycleseg;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig cfg;
  cfg.channels = {3, 4};
  return cfg;
}

}  // namespace

TEST(Encoder, StageShapes) {
  Rng rng(1);
  const EncoderConfig cfg;
  const auto params = init_encoder(cfg, rng);
  oracle::Rng data(2);
  const auto pyr = encode(oracle::random_tensor({1, 3, 64, 64}, data, 0, 1), params);
  ASSERT_EQ(pyr.size(), 3u);
  EXPECT_EQ(pyr[0].shape(), (Shape{1, 8, 32, 32}));
  EXPECT_EQ(pyr[1].shape(), (Shape{1, 16, 16, 16}));
  EXPECT_EQ(pyr[2].shape(), (Shape{1, 32, 8, 8}));
}

TEST(Encoder, RejectsIndivisibleSizeAndBadConfig) {
  Rng rng(1);
  const auto params = init_encoder(EncoderConfig{}, rng);
  EXPECT_THROW(encode(Tensor::zeros({1, 3, 20, 20}), params), ShapeError);
  EncoderConfig one;
  one.channels = {8};
  EXPECT_THROW(one.validate(), InvalidConfig);
  EncoderConfig down;
  down.channels = {16, 8};
  EXPECT_THROW(down.validate(), InvalidConfig);
}

TEST(Encoder, SiameseBranchesAgreeBitwise) {
  Rng rng(3);
  const auto params = init_encoder(EncoderConfig{}, rng);
  oracle::Rng data(4);
  const Tensor img = oracle::random_tensor({1, 3, 32, 32}, data, 0, 1);
  const Tensor copy(img.shape(), std::vector<double>(img.values().begin(), img.values().end()));
  const auto a = encode(img, params), b = encode(copy, params);
  for (std::size_t s = 0; s < a.size(); ++s) EXPECT_TRUE(identical(a[s], b[s]));
}

TEST(Encoder, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  const EncoderConfig cfg = small_encoder();
  const auto base = init_encoder(cfg, rng);
  oracle::Rng data(6);
  const Tensor img = oracle::random_tensor({1, 3, 8, 8}, data, 0, 1);
  const Tensor w = oracle::weights_like(encode(img, base).back());
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    EncoderParams p = base;
    p.down[0].weight = in[1];
    p.refine[1].bias = in[2];
    return oracle::readout(encode(in[0], p).back(), w);
  };
  EXPECT_LT(oracle::gradient_error(f, {img, base.down[0].weight, base.refine[1].bias}, 1e-4), 1e-4);
}

TEST(Decoder, ZeroHeadGivesEvenOdds) {
  Rng rng(7);
  const EncoderConfig cfg;
  const auto params = init_decoder(cfg, 16, 0, rng);
  oracle::Rng data(8);
  const Tensor logits = decode(oracle::random_tensor({1, 16, 8, 8}, data), {}, params);
  EXPECT_EQ(logits.shape(), (Shape{1, 2, 64, 64}));
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
  for (double p : oracle::copy_values(ops::softmax_channels(logits))) EXPECT_EQ(p, 0.5);
}

TEST(Decoder, SkipShapesAreChecked) {
  Rng rng(9);
  const auto params = init_decoder(EncoderConfig{}, 16, 2, rng);
  const Tensor skips[] = {Tensor::zeros({1, 16, 16, 16}), Tensor::zeros({1, 8, 32, 32})};
  EXPECT_EQ(decode(Tensor::zeros({1, 16, 8, 8}), skips, params).shape(), (Shape{1, 2, 64, 64}));
  const Tensor wrong[] = {Tensor::zeros({1, 16, 8, 8}), Tensor::zeros({1, 8, 32, 32})};
  EXPECT_THROW(decode(Tensor::zeros({1, 16, 8, 8}), wrong, params), ShapeError);
  EXPECT_THROW(decode(Tensor::zeros({1, 16, 8, 8}), std::span(skips, 1), params), ShapeError);
}

TEST(Decoder, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  const EncoderConfig cfg = small_encoder();
  auto base = init_decoder(cfg, 5, 1, rng);
  oracle::Rng data(11);
  base.head = make_conv(2, 3, 1, 1, 0, rng);  // a zero head would hide every upstream gradient
  const Tensor h = oracle::random_tensor({1, 5, 2, 2}, data);
  const Tensor skip = oracle::random_tensor({1, 3, 4, 4}, data);
  const Tensor w = oracle::weights_like(decode(h, std::span(&skip, 1), base));
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    DecoderParams p = base;
    p.blocks[0].weight = in[2];
    p.fuse[0].excite.bias = in[3];
    return oracle::readout(decode(in[0], in.subspan(1, 1), p), w);
  };
  EXPECT_LT(oracle::gradient_error(f, {h, skip, base.blocks[0].weight, base.fuse[0].excite.bias}, 1e-4), 1e-4);
}

TEST(Cam, SaturatedAttentionDoublesInput) {
  Rng rng(12);
  CamParams p = init_cam(4, rng);
  p.excite.weight = Tensor::zeros(p.excite.weight.shape());
  p.excite.bias = Tensor({4}, 20.0);
  oracle::Rng data(13);
  const Tensor s = oracle::random_tensor({1, 4, 3, 3}, data), d = oracle::random_tensor({1, 4, 3, 3}, data);
  const Tensor parts[] = {s, d};
  const Tensor f = apply(p.merge, ops::concat_channels(parts));
  const Tensor out = cam_fuse(s, d, p);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], 2.0 * f[i], 1e-8 * (1 + std::abs(f[i])));
}

TEST(Cam, AttentionInOpenUnitInterval) {
  Rng rng(14);
  const CamParams p = init_cam(8, rng);
  oracle::Rng data(15);
  const Tensor a = cam_attention(oracle::random_tensor({1, 8, 4, 4}, data, -3, 3),
                                 oracle::random_tensor({1, 8, 4, 4}, data, -3, 3), p);
  EXPECT_EQ(a.shape(), (Shape{1, 8, 1, 1}));
  for (double v : a.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(cam_fuse(Tensor::zeros({1, 8, 4, 4}), Tensor::zeros({1, 8, 2, 2}), p), ShapeError);
}

TEST(Cam, GradientMatchesFiniteDifferences) {
  Rng rng(16);
  const CamParams base = init_cam(4, rng);
  oracle::Rng data(17);
  const Tensor s = oracle::random_tensor({1, 4, 3, 3}, data), d = oracle::random_tensor({1, 4, 3, 3}, data);
  const Tensor w = oracle::weights_like(cam_fuse(s, d, base));
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    CamParams p = base;
    p.merge.weight = in[2];
    p.squeeze.weight = in[3];
    p.excite.weight = in[4];
    return oracle::readout(cam_fuse(in[0], in[1], p), w);
  };
  EXPECT_LT(oracle::gradient_error(f, {s, d, base.merge.weight, base.squeeze.weight, base.excite.weight}, 1e-4), 1e-4);
}
