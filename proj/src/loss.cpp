// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cycleseg/errors.hpp"
#include "cycleseg/ops.hpp"

namespace cycleseg {

namespace {

void check_labels(const Tensor& logits, const Mask& gt) {
  if (logits.rank() != 4 || logits.dim(0) != 1 || logits.dim(1) != 2)
    throw ShapeError("loss expects 1 x 2 x H x W logits, got " + shape_str(logits.shape()));
  if (gt.size() == 0) throw ShapeError("loss on an empty image");
  if (gt.height != logits.dim(2) || gt.width != logits.dim(3))
    throw ShapeError("ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                     " does not match logits " + shape_str(logits.shape()));
  for (auto v : gt.values)
    if (v > 1) throw LabelError("ground-truth values must be 0 or 1, got " + std::to_string(v));
}

}  // namespace

Tensor lovasz_extension(const Tensor& errors, std::span<const std::uint8_t> member) {
  const std::size_t n = errors.numel();
  if (n == 0) throw ShapeError("lovasz_extension of an empty vector");
  if (member.size() != n) throw ShapeError("lovasz_extension: membership length differs from error length");
  auto ev = errors.values();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ev[a] > ev[b]; });

  const double total = static_cast<double>(std::count_if(member.begin(), member.end(), [](auto v) { return v != 0; }));
  // jaccard[j] = Jaccard loss of the top-(j+1) error set = |M| / |gt u M|.
  std::vector<double> jaccard(n);
  std::size_t outside = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!member[order[j]]) ++outside;
    jaccard[j] = static_cast<double>(j + 1) / (total + static_cast<double>(outside));
  }
  // Summation by parts: sum_j (m_(j) - m_(j+1)) * jaccard_j, so vertices of
  // the hypercube reproduce the set function exactly.
  double loss = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double next = j + 1 < n ? ev[order[j + 1]] : 0.0;
    loss += (ev[order[j]] - next) * jaccard[j];
  }
  return emit(errors.tape(), Shape{1}, {loss},
              [errors, order = std::move(order), jaccard = std::move(jaccard)](std::span<const double> g, Tape& t) {
                auto ge = t.grad_buffer(errors.node());
                for (std::size_t j = 0; j < order.size(); ++j) {
                  const double step = jaccard[j] - (j > 0 ? jaccard[j - 1] : 0.0);
                  ge[order[j]] += g[0] * step;
                }
              });
}

Tensor class_errors(const Tensor& probs, const Mask& gt, std::size_t c) {
  if (probs.rank() != 4 || probs.dim(0) != 1 || c >= probs.dim(1))
    throw ShapeError("class_errors: bad probability map " + shape_str(probs.shape()));
  const std::size_t plane = probs.dim(2) * probs.dim(3);
  if (gt.size() != plane) throw ShapeError("class_errors: mask size differs from probability map");
  auto pv = probs.values();
  std::vector<double> out(plane);
  std::vector<double> sign(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const double p = pv[c * plane + i];
    const bool is_class = gt.values[i] == c;
    out[i] = is_class ? 1.0 - p : p;
    sign[i] = is_class ? -1.0 : 1.0;
  }
  return emit(probs.tape(), Shape{plane}, std::move(out),
              [probs, c, plane, sign = std::move(sign)](std::span<const double> g, Tape& t) {
                auto gp = t.grad_buffer(probs.node());
                for (std::size_t i = 0; i < plane; ++i) gp[c * plane + i] += sign[i] * g[i];
              });
}

Tensor lovasz_softmax(const Tensor& logits, const Mask& gt) {
  check_labels(logits, gt);
  Tensor probs = ops::softmax_channels(logits);
  Tensor total;
  std::size_t present = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<std::uint8_t> member(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) member[i] = gt.values[i] == c;
    if (std::none_of(member.begin(), member.end(), [](auto v) { return v != 0; })) continue;
    Tensor term = lovasz_extension(class_errors(probs, gt, c), member);
    total = total.defined() ? ops::add(total, term) : term;
    ++present;
  }
  return present == 1 ? total : ops::scale(total, 1.0 / static_cast<double>(present));
}

Tensor cross_entropy(const Tensor& logits, const Mask& gt) {
  check_labels(logits, gt);
  const std::size_t plane = gt.size();
  auto lv = logits.values();
  std::vector<double> grad(2 * plane);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const double a = lv[i], b = lv[plane + i];
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    const std::size_t y = gt.values[i];
    loss += lse - (y ? b : a);
    const double pa = std::exp(a - lse), pb = std::exp(b - lse);
    grad[i] = (pa - (y == 0 ? 1.0 : 0.0)) * inv;
    grad[plane + i] = (pb - (y == 1 ? 1.0 : 0.0)) * inv;
  }
  return emit(logits.tape(), Shape{1}, {loss * inv}, [logits, grad = std::move(grad)](std::span<const double> g, Tape& t) {
    auto gl = t.grad_buffer(logits.node());
    for (std::size_t i = 0; i < grad.size(); ++i) gl[i] += g[0] * grad[i];
  });
}

}  // namespace cycleseg
