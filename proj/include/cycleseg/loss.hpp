// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "cycleseg/mask.hpp"
#include "cycleseg/tensor.hpp"

namespace cycleseg {

enum class LossKind { lovasz, cross_entropy };

/// Lovász extension of the Jaccard loss of one class, evaluated at the
/// error vector `errors` (values in [0,1]); `member[i]` says whether pixel i
/// belongs to the class. Sorting is stable (ties by pixel index) and the
/// permutation is held constant for the gradient.
Tensor lovasz_extension(const Tensor& errors, std::span<const std::uint8_t> member);

/// Per-pixel errors of class c: 1 - p if the pixel is of class c, else p.
/// `probs` is 1 x C x H x W; result is a flat vector of H*W errors.
Tensor class_errors(const Tensor& probs, const Mask& gt, std::size_t c);

/// Two-class Lovász-Softmax: softmax over the class axis, then the mean of
/// lovasz_extension over the classes present in the ground truth.
Tensor lovasz_softmax(const Tensor& logits, const Mask& gt);

/// Mean negative log-likelihood of the true class.
Tensor cross_entropy(const Tensor& logits, const Mask& gt);

}  // namespace cycleseg
