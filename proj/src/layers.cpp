// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/layers.hpp"

#include <cmath>

#include "cycleseg/errors.hpp"
#include "cycleseg/ops.hpp"

namespace cycleseg {

ConvLayer make_conv(std::size_t out_ch, std::size_t in_ch, std::size_t kernel, std::size_t stride, std::size_t padding,
                    Rng& rng) {
  const double fan_in = static_cast<double>(in_ch * kernel * kernel);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  std::vector<double> w(out_ch * in_ch * kernel * kernel);
  for (auto& v : w) v = dist(rng);
  return {Tensor({out_ch, in_ch, kernel, kernel}, std::move(w)), Tensor::zeros({out_ch}), stride, padding};
}

ConvLayer make_zero_conv(std::size_t out_ch, std::size_t in_ch, std::size_t kernel, std::size_t stride,
                         std::size_t padding) {
  return {Tensor::zeros({out_ch, in_ch, kernel, kernel}), Tensor::zeros({out_ch}), stride, padding};
}

Tensor apply(const ConvLayer& conv, const Tensor& x) {
  return ops::conv2d(x, conv.weight, conv.bias, conv.stride, conv.padding);
}

void EncoderConfig::validate() const {
  if (channels.size() < 2) throw InvalidConfig("encoder needs at least two stages");
  for (std::size_t i = 1; i < channels.size(); ++i)
    if (channels[i] <= channels[i - 1]) throw InvalidConfig("encoder channels must be strictly increasing");
  if (in_channels == 0 || channels[0] == 0) throw InvalidConfig("encoder channel counts must be positive");
}

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  std::size_t in = cfg.in_channels;
  for (auto ch : cfg.channels) {
    p.down.push_back(make_conv(ch, in, 3, 2, 1, rng));
    p.refine.push_back(make_conv(ch, ch, 3, 1, 1, rng));
    in = ch;
  }
  return p;
}

FeaturePyramid encode(const Tensor& image, const EncoderParams& params) {
  if (image.rank() != 4) throw ShapeError("encode: image must be 1 x C x H x W, got " + shape_str(image.shape()));
  const std::size_t factor = std::size_t{1} << params.down.size();
  if (image.dim(2) % factor != 0 || image.dim(3) % factor != 0)
    throw ShapeError("encode: spatial size " + shape_str(image.shape()) + " not divisible by " +
                     std::to_string(factor));
  FeaturePyramid pyramid;
  Tensor x = ops::scale(ops::sub(image, Tensor(image.shape(), kImageMean)), 1.0 / kImageSpread);
  for (std::size_t s = 0; s < params.down.size(); ++s) {
    x = ops::relu(apply(params.down[s], x));
    x = ops::relu(apply(params.refine[s], x));
    pyramid.push_back(x);
  }
  return pyramid;
}

CamParams init_cam(std::size_t channels, Rng& rng) {
  const std::size_t reduced = std::max<std::size_t>(1, channels / 4);
  return {make_conv(channels, 2 * channels, 1, 1, 0, rng), make_conv(reduced, channels, 1, 1, 0, rng),
          make_conv(channels, reduced, 1, 1, 0, rng)};
}

namespace {

Tensor cam_merge(const Tensor& shallow, const Tensor& deep, const CamParams& params) {
  if (shallow.shape() != deep.shape())
    throw ShapeError("cam_fuse: inputs differ " + shape_str(shallow.shape()) + " vs " + shape_str(deep.shape()));
  const Tensor parts[] = {shallow, deep};
  return apply(params.merge, ops::concat_channels(parts));
}

Tensor attention_of(const Tensor& fused, const CamParams& params) {
  Tensor squeezed = ops::relu(apply(params.squeeze, ops::global_avg_pool(fused)));
  return ops::sigmoid(apply(params.excite, squeezed));
}

}  // namespace

Tensor cam_attention(const Tensor& shallow, const Tensor& deep, const CamParams& params) {
  return attention_of(cam_merge(shallow, deep, params), params);
}

Tensor cam_fuse(const Tensor& shallow, const Tensor& deep, const CamParams& params) {
  Tensor f = cam_merge(shallow, deep, params);
  Tensor a = ops::upsample_bilinear(attention_of(f, params), f.dim(2), f.dim(3));
  return ops::add(ops::mul(f, a), f);
}

DecoderParams init_decoder(const EncoderConfig& cfg, std::size_t input_width, std::size_t skip_count, Rng& rng) {
  cfg.validate();
  const std::size_t stages = cfg.stages();
  if (skip_count >= stages) throw InvalidConfig("decoder: too many skip inputs for the encoder depth");
  DecoderParams p;
  std::size_t in = input_width;
  for (std::size_t j = 0; j < stages; ++j) {
    const std::size_t out = j + 1 < stages ? cfg.channels[stages - 2 - j] : cfg.channels[0];
    p.blocks.push_back(make_conv(out, in, 3, 1, 1, rng));
    if (j < skip_count) p.fuse.push_back(init_cam(out, rng));
    in = out;
  }
  p.head = make_zero_conv(2, in, 1, 1, 0);
  return p;
}

Tensor decode(const Tensor& h, std::span<const Tensor> skips, const DecoderParams& params) {
  if (h.rank() != 4) throw ShapeError("decode: expected a 4-D map, got " + shape_str(h.shape()));
  if (skips.size() != params.fuse.size())
    throw ShapeError("decode: " + std::to_string(skips.size()) + " skips for " + std::to_string(params.fuse.size()) +
                     " fusion blocks");
  Tensor x = h;
  for (std::size_t j = 0; j < params.blocks.size(); ++j) {
    x = ops::upsample_bilinear(x, 2 * x.dim(2), 2 * x.dim(3));
    x = apply(params.blocks[j], x);
    if (j + 1 < params.blocks.size()) x = ops::relu(x);
    if (j < skips.size()) {
      if (skips[j].shape() != x.shape())
        throw ShapeError("decode: skip " + std::to_string(j) + " has shape " + shape_str(skips[j].shape()) +
                         ", decoder is at " + shape_str(x.shape()));
      x = cam_fuse(skips[j], x, params.fuse[j]);
    }
  }
  return apply(params.head, x);
}

}  // namespace cycleseg
