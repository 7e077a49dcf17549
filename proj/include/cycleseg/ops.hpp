// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "cycleseg/tensor.hpp"

/// Differentiable primitives. Every op records its exact local derivative
/// when any input is tracked and computes plain values otherwise.
namespace cycleseg::ops {

enum class Elementwise { add, sub, mul, sigmoid, tanh, relu };

/// Binary kinds need equal shapes; unary kinds ignore `b`.
Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

/// Adds a per-channel bias vector (length C) to an N x C x H x W map.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Cross-correlation with zero padding. kernel is O x I x kH x kW; bias is
/// length O or undefined for none.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row-wise softmax of a 2-D tensor, computed with max subtraction.
Tensor softmax_rows(const Tensor& s);

enum class Pool { roi_avg, roi_max };

/// Pools the whole map (one region) into an out_h x out_w grid; bin i spans
/// rows floor(i*H/out_h) .. floor((i+1)*H/out_h) - 1, likewise for columns.
Tensor pool(Pool kind, const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor global_avg_pool(const Tensor& x);

/// Bilinear resize with align_corners = false. A 1x1 map broadcasts.
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// 1 x C x H x W  ->  (H*W) x C.
Tensor to_rows(const Tensor& x);
/// (H*W) x C  ->  1 x C x H x W.
Tensor from_rows(const Tensor& rows, std::size_t height, std::size_t width);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);

/// Channel `c` of an N x C x H x W map as N x 1 x H x W.
Tensor select_channel(const Tensor& x, std::size_t c);
/// Softmax across the channel axis at every pixel.
Tensor softmax_channels(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace cycleseg::ops
