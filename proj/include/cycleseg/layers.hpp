// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cycleseg/tensor.hpp"

namespace cycleseg {

using Rng = std::mt19937_64;

/// Convolution weights plus the fixed geometry they are applied with.
struct ConvLayer {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

/// He-normal weights, zero bias.
ConvLayer make_conv(std::size_t out_ch, std::size_t in_ch, std::size_t kernel, std::size_t stride, std::size_t padding,
                    Rng& rng);
ConvLayer make_zero_conv(std::size_t out_ch, std::size_t in_ch, std::size_t kernel, std::size_t stride,
                         std::size_t padding);
Tensor apply(const ConvLayer& conv, const Tensor& x);

/// Toy stand-in for the pretrained backbone: each stage halves the spatial
/// size with a stride-2 3x3 conv followed by a 3x3 conv, both with ReLU.
struct EncoderConfig {
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t in_channels = 3;

  std::size_t stages() const { return channels.size(); }
  void validate() const;
};

struct EncoderParams {
  std::vector<ConvLayer> down;
  std::vector<ConvLayer> refine;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < down.size(); ++i) {
      down[i].visit(prefix + ".down" + std::to_string(i), f);
      refine[i].visit(prefix + ".refine" + std::to_string(i), f);
    }
  }
};

/// Images in [0,1] enter the encoder as (x - kImageMean) / kImageSpread.
/// Without this the first-stage features are so small that the attention
/// affinities start out flat and training stalls at an all-background mask.
inline constexpr double kImageMean = 0.5;
inline constexpr double kImageSpread = 0.25;

/// Per-stage feature maps, shallowest first, deepest last.
using FeaturePyramid = std::vector<Tensor>;

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng);
FeaturePyramid encode(const Tensor& image, const EncoderParams& params);

/// Channel-attention fusion: f = conv1x1(shallow || deep);
/// a = sigmoid(excite(relu(squeeze(gap(f))))); out = f * a + f.
struct CamParams {
  ConvLayer merge;
  ConvLayer squeeze;
  ConvLayer excite;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    merge.visit(prefix + ".merge", f);
    squeeze.visit(prefix + ".squeeze", f);
    excite.visit(prefix + ".excite", f);
  }
};

CamParams init_cam(std::size_t channels, Rng& rng);
/// Both inputs must already share spatial size and channel count.
Tensor cam_fuse(const Tensor& shallow, const Tensor& deep, const CamParams& params);
/// The per-channel attention vector (1 x C x 1 x 1) cam_fuse applies.
Tensor cam_attention(const Tensor& shallow, const Tensor& deep, const CamParams& params);

/// One upsample + 3x3 conv block per encoder stage, then a 1x1 head to two
/// class logits. fuse[j] merges skip j after block j. Every block but the last
/// ends in ReLU; the head reads signed features, otherwise a head whose class
/// weights split by sign caps the foreground probability at 0.5.
struct DecoderParams {
  std::vector<ConvLayer> blocks;
  std::vector<CamParams> fuse;
  ConvLayer head;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), f);
    for (std::size_t i = 0; i < fuse.size(); ++i) fuse[i].visit(prefix + ".fuse" + std::to_string(i), f);
    head.visit(prefix + ".head", f);
  }
};

/// `skip_count` skips are expected, feeding stages channels[S-2], channels[S-3], ...
/// The head starts at zero so an untrained decoder emits uniform logits.
DecoderParams init_decoder(const EncoderConfig& cfg, std::size_t input_width, std::size_t skip_count, Rng& rng);
/// `h` sits at the deepest resolution; skips are ordered deep to shallow.
Tensor decode(const Tensor& h, std::span<const Tensor> skips, const DecoderParams& params);

}  // namespace cycleseg
