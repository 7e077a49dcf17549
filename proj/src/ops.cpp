// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cycleseg/errors.hpp"

namespace cycleseg::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (!x.defined() || x.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
}

double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

struct Dims4 {
  std::size_t n, c, h, w;
};

Dims4 dims4(const Tensor& x) { return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)}; }

}  // namespace

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b) {
  switch (kind) {
    case Elementwise::add:
      return add(a, b);
    case Elementwise::sub:
      return sub(a, b);
    case Elementwise::mul:
      return mul(a, b);
    case Elementwise::sigmoid:
      return sigmoid(a);
    case Elementwise::tanh:
      return tanh(a);
    case Elementwise::relu:
      return relu(a);
  }
  throw Error("unknown elementwise kind");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return emit(common_tape({&a, &b}), a.shape(), std::move(out), [a, b](std::span<const double> g, Tape& t) {
    accumulate_grad(t, a, g);
    accumulate_grad(t, b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return emit(common_tape({&a, &b}), a.shape(), std::move(out), [a, b](std::span<const double> g, Tape& t) {
    accumulate_grad(t, a, g);
    if (b.tracked()) {
      auto buf = t.grad_buffer(b.node());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return emit(common_tape({&a, &b}), a.shape(), std::move(out), [a, b](std::span<const double> g, Tape& t) {
    if (a.tracked()) {
      auto buf = t.grad_buffer(a.node());
      auto bv = b.values();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * bv[i];
    }
    if (b.tracked()) {
      auto buf = t.grad_buffer(b.node());
      auto av = a.values();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return emit(x.tape(), x.shape(), std::move(out), [x, factor](std::span<const double> g, Tape& t) {
    auto buf = t.grad_buffer(x.node());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * factor;
  });
}

namespace {

// Unary op whose derivative is expressed through its output value.
template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdy) {
  if (!x.defined()) throw ShapeError("unary op on undefined tensor");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tape* tape = x.tape();
  if (!tape) return Tensor(x.shape(), std::move(out));
  std::vector<double> yv(out);
  return tape->record(x.shape(), std::move(out), [x, yv = std::move(yv), dfdy](std::span<const double> g, Tape& t) {
    auto buf = t.grad_buffer(x.node());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * dfdy(yv[i]);
  });
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary(x, sigmoid_value, [](double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 4, "add_channel_bias");
  auto [n, c, h, w] = dims4(x);
  if (bias.numel() != c)
    throw ShapeError("add_channel_bias: bias length " + std::to_string(bias.numel()) + " for " +
                     std::to_string(c) + " channels");
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(xv.size());
  const std::size_t plane = h * w;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = xv[off + i] + bv[ch];
    }
  return emit(common_tape({&x, &bias}), x.shape(), std::move(out),
              [x, bias, n, c, plane](std::span<const double> g, Tape& t) {
                accumulate_grad(t, x, g);
                if (bias.tracked()) {
                  auto buf = t.grad_buffer(bias.node());
                  for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      double s = 0.0;
                      const std::size_t off = (b * c + ch) * plane;
                      for (std::size_t i = 0; i < plane; ++i) s += g[off + i];
                      buf[ch] += s;
                    }
                }
              });
}

namespace {

struct ConvGeometry {
  std::size_t n, in_c, h, w;
  std::size_t out_c, kh, kw;
  std::size_t stride, pad;
  std::size_t oh, ow;
  // Valid output-column range [lo, hi) for each kernel column.
  std::vector<std::size_t> col_lo, col_hi;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.in_c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.out_c = k.dim(0);
  g.kh = k.dim(2);
  g.kw = k.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (k.dim(1) != g.in_c)
    throw ShapeError("conv2d: kernel " + shape_str(k.shape()) + " does not match input " + shape_str(x.shape()));
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw)
    throw ShapeError("conv2d: non-positive output size for input " + shape_str(x.shape()) + " kernel " +
                     shape_str(k.shape()));
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  g.col_lo.resize(g.kw);
  g.col_hi.resize(g.kw);
  for (std::size_t kx = 0; kx < g.kw; ++kx) {
    // input column = ox * stride + kx - pad must lie in [0, w)
    std::size_t lo = kx >= pad ? 0 : (pad - kx + stride - 1) / stride;
    std::size_t hi = 0;
    if (g.w + pad > kx) hi = std::min(g.ow, (g.w - 1 + pad - kx) / stride + 1);
    g.col_lo[kx] = std::min(lo, hi);
    g.col_hi[kx] = hi;
  }
  return g;
}

// Runs f(out_row, in_row_base, count) over every valid (output row, kernel
// tap) pair of one (output plane, input plane) combination. in_row_base is
// already offset so that element ox*stride pairs with output column ox.
template <class F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      const std::size_t lo = g.col_lo[kx];
      const std::size_t hi = g.col_hi[kx];
      if (lo >= hi) continue;
      for (std::size_t oy = 0; oy < g.oh; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        f(ky, kx, oy, static_cast<std::size_t>(iy), lo, hi);
      }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry(x, kernel, stride, padding);
  if (bias.defined() && bias.numel() != g.out_c)
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " for " + std::to_string(g.out_c) +
                     " output channels");
  auto xv = x.values();
  auto kv = kernel.values();
  const std::size_t in_plane = g.h * g.w;
  const std::size_t out_plane = g.oh * g.ow;
  const std::size_t ksize = g.kh * g.kw;
  std::vector<double> out(g.n * g.out_c * out_plane, 0.0);

  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t o = 0; o < g.out_c; ++o) {
      double* op = out.data() + (b * g.out_c + o) * out_plane;
      if (bias.defined()) std::fill(op, op + out_plane, bias[o]);
      for (std::size_t i = 0; i < g.in_c; ++i) {
        const double* ip = xv.data() + (b * g.in_c + i) * in_plane;
        const double* kp = kv.data() + (o * g.in_c + i) * ksize;
        for_each_tap(g, [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t iy, std::size_t lo,
                            std::size_t hi) {
          const double wgt = kp[ky * g.kw + kx];
          double* orow = op + oy * g.ow + lo;
          const double* irow = ip + iy * g.w + lo * g.stride + kx - padding;
          const std::size_t cnt = hi - lo;
          if (g.stride == 1) {
            for (std::size_t j = 0; j < cnt; ++j) orow[j] += wgt * irow[j];
          } else {
            for (std::size_t j = 0; j < cnt; ++j) orow[j] += wgt * irow[j * g.stride];
          }
        });
      }
    }

  Tape* tape = common_tape({&x, &kernel, &bias});
  return emit(tape, Shape{g.n, g.out_c, g.oh, g.ow}, std::move(out),
              [x, kernel, bias, g](std::span<const double> grad, Tape& t) {
                const std::size_t in_plane = g.h * g.w;
                const std::size_t out_plane = g.oh * g.ow;
                const std::size_t ksize = g.kh * g.kw;
                auto xv = x.values();
                auto kv = kernel.values();
                if (bias.tracked()) {
                  auto gb = t.grad_buffer(bias.node());
                  for (std::size_t b = 0; b < g.n; ++b)
                    for (std::size_t o = 0; o < g.out_c; ++o) {
                      const double* gp = grad.data() + (b * g.out_c + o) * out_plane;
                      double s = 0.0;
                      for (std::size_t j = 0; j < out_plane; ++j) s += gp[j];
                      gb[o] += s;
                    }
                }
                std::span<double> gx, gk;
                if (x.tracked()) gx = t.grad_buffer(x.node());
                if (kernel.tracked()) gk = t.grad_buffer(kernel.node());
                if (gx.empty() && gk.empty()) return;
                const std::size_t pad = g.pad;
                for (std::size_t b = 0; b < g.n; ++b)
                  for (std::size_t o = 0; o < g.out_c; ++o) {
                    const double* gp = grad.data() + (b * g.out_c + o) * out_plane;
                    for (std::size_t i = 0; i < g.in_c; ++i) {
                      const double* ip = xv.data() + (b * g.in_c + i) * in_plane;
                      const double* kp = kv.data() + (o * g.in_c + i) * ksize;
                      double* gxp = gx.empty() ? nullptr : gx.data() + (b * g.in_c + i) * in_plane;
                      double* gkp = gk.empty() ? nullptr : gk.data() + (o * g.in_c + i) * ksize;
                      for_each_tap(g, [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t iy,
                                          std::size_t lo, std::size_t hi) {
                        const double* grow = gp + oy * g.ow + lo;
                        const std::size_t base = iy * g.w + lo * g.stride + kx - pad;
                        const std::size_t cnt = hi - lo;
                        if (gkp) {
                          const double* irow = ip + base;
                          double s = 0.0;
                          if (g.stride == 1) {
                            for (std::size_t j = 0; j < cnt; ++j) s += grow[j] * irow[j];
                          } else {
                            for (std::size_t j = 0; j < cnt; ++j) s += grow[j] * irow[j * g.stride];
                          }
                          gkp[ky * g.kw + kx] += s;
                        }
                        if (gxp) {
                          const double wgt = kp[ky * g.kw + kx];
                          double* xrow = gxp + base;
                          if (g.stride == 1) {
                            for (std::size_t j = 0; j < cnt; ++j) xrow[j] += wgt * grow[j];
                          } else {
                            for (std::size_t j = 0; j < cnt; ++j) xrow[j * g.stride] += wgt * grow[j];
                          }
                        }
                      });
                    }
                  }
              });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return emit(common_tape({&a, &b}), Shape{m, n}, std::move(out), [a, b, m, k, n](std::span<const double> g, Tape& t) {
    auto av = a.values();
    auto bv = b.values();
    if (a.tracked()) {
      auto ga = t.grad_buffer(a.node());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (b.tracked()) {
      auto gb = t.grad_buffer(b.node());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return emit(a.tape(), Shape{n, m}, std::move(out), [a, m, n](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a.node());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Tensor softmax_rows(const Tensor& s) {
  require_rank(s, 2, "softmax_rows");
  const std::size_t m = s.dim(0), n = s.dim(1);
  auto sv = s.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = sv.data() + i * n;
    double* orow = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= total;
  }
  if (!s.tracked()) return Tensor(Shape{m, n}, std::move(out));
  std::vector<double> y(out);
  return s.tape()->record(Shape{m, n}, std::move(out), [s, y = std::move(y), m, n](std::span<const double> g, Tape& t) {
    auto gs = t.grad_buffer(s.node());
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Tensor pool(Pool kind, const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "pool");
  auto [n, c, h, w] = dims4(x);
  if (out_h == 0 || out_w == 0 || out_h > h || out_w > w)
    throw ShapeError("pool: output grid " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " does not fit input " + shape_str(x.shape()));
  auto xv = x.values();
  const std::size_t in_plane = h * w;
  const std::size_t out_plane = out_h * out_w;
  std::vector<double> out(n * c * out_plane);
  // Source index of every output element (max) or nothing (avg).
  std::vector<std::size_t> argmax(kind == Pool::roi_max ? out.size() : 0);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* ip = xv.data() + p * in_plane;
    for (std::size_t by = 0; by < out_h; ++by) {
      const std::size_t y0 = by * h / out_h, y1 = (by + 1) * h / out_h;
      for (std::size_t bx = 0; bx < out_w; ++bx) {
        const std::size_t x0 = bx * w / out_w, x1 = (bx + 1) * w / out_w;
        const std::size_t oi = p * out_plane + by * out_w + bx;
        if (kind == Pool::roi_avg) {
          double s = 0.0;
          for (std::size_t yy = y0; yy < y1; ++yy)
            for (std::size_t xx = x0; xx < x1; ++xx) s += ip[yy * w + xx];
          out[oi] = s / static_cast<double>((y1 - y0) * (x1 - x0));
        } else {
          std::size_t best = y0 * w + x0;
          for (std::size_t yy = y0; yy < y1; ++yy)
            for (std::size_t xx = x0; xx < x1; ++xx)
              if (ip[yy * w + xx] > ip[best]) best = yy * w + xx;
          out[oi] = ip[best];
          argmax[oi] = p * in_plane + best;
        }
      }
    }
  }
  return emit(x.tape(), Shape{n, c, out_h, out_w}, std::move(out),
              [x, kind, argmax = std::move(argmax), n, c, h, w, out_h, out_w](std::span<const double> g, Tape& t) {
                auto gx = t.grad_buffer(x.node());
                if (kind == Pool::roi_max) {
                  for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                  return;
                }
                const std::size_t in_plane = h * w, out_plane = out_h * out_w;
                for (std::size_t p = 0; p < n * c; ++p)
                  for (std::size_t by = 0; by < out_h; ++by) {
                    const std::size_t y0 = by * h / out_h, y1 = (by + 1) * h / out_h;
                    for (std::size_t bx = 0; bx < out_w; ++bx) {
                      const std::size_t x0 = bx * w / out_w, x1 = (bx + 1) * w / out_w;
                      const double share =
                          g[p * out_plane + by * out_w + bx] / static_cast<double>((y1 - y0) * (x1 - x0));
                      for (std::size_t yy = y0; yy < y1; ++yy)
                        for (std::size_t xx = x0; xx < x1; ++xx) gx[p * in_plane + yy * w + xx] += share;
                    }
                  }
              });
}

Tensor global_avg_pool(const Tensor& x) { return pool(Pool::roi_avg, x, 1, 1); }

namespace {

struct Lerp {
  std::size_t i0, i1;
  double frac;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
  std::vector<Lerp> table(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    table[o] = {i0, i1, i1 == i0 ? 0.0 : src - static_cast<double>(i0)};
  }
  return table;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "upsample_bilinear");
  auto [n, c, h, w] = dims4(x);
  if (out_h < h || out_w < w)
    throw ShapeError("upsample_bilinear: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " smaller than input " + shape_str(x.shape()));
  auto ys = lerp_table(h, out_h);
  auto xs = lerp_table(w, out_w);
  auto xv = x.values();
  const std::size_t in_plane = h * w, out_plane = out_h * out_w;
  std::vector<double> out(n * c * out_plane);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* ip = xv.data() + p * in_plane;
    double* op = out.data() + p * out_plane;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& ly = ys[oy];
      const double* r0 = ip + ly.i0 * w;
      const double* r1 = ip + ly.i1 * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& lx = xs[ox];
        const double top = r0[lx.i0] + lx.frac * (r0[lx.i1] - r0[lx.i0]);
        const double bot = r1[lx.i0] + lx.frac * (r1[lx.i1] - r1[lx.i0]);
        op[oy * out_w + ox] = top + ly.frac * (bot - top);
      }
    }
  }
  return emit(x.tape(), Shape{n, c, out_h, out_w}, std::move(out),
              [x, ys = std::move(ys), xs = std::move(xs), n, c, h, w, out_h, out_w](std::span<const double> g,
                                                                                     Tape& t) {
                auto gx = t.grad_buffer(x.node());
                const std::size_t in_plane = h * w, out_plane = out_h * out_w;
                for (std::size_t p = 0; p < n * c; ++p) {
                  double* gp = gx.data() + p * in_plane;
                  const double* go = g.data() + p * out_plane;
                  for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto& ly = ys[oy];
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                      const auto& lx = xs[ox];
                      const double v = go[oy * out_w + ox];
                      const double top = v * (1.0 - ly.frac), bot = v * ly.frac;
                      gp[ly.i0 * w + lx.i0] += top * (1.0 - lx.frac);
                      gp[ly.i0 * w + lx.i1] += top * lx.frac;
                      gp[ly.i1 * w + lx.i0] += bot * (1.0 - lx.frac);
                      gp[ly.i1 * w + lx.i1] += bot * lx.frac;
                    }
                  }
                }
              });
}

Tensor to_rows(const Tensor& x) {
  require_rank(x, 4, "to_rows");
  if (x.dim(0) != 1) throw ShapeError("to_rows: batch must be 1, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xv = x.values();
  std::vector<double> out(hw * c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = xv[ch * hw + p];
  return emit(x.tape(), Shape{hw, c}, std::move(out), [x, c, hw](std::span<const double> g, Tape& t) {
    auto gx = t.grad_buffer(x.node());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) gx[ch * hw + p] += g[p * c + ch];
  });
}

Tensor from_rows(const Tensor& rows, std::size_t height, std::size_t width) {
  require_rank(rows, 2, "from_rows");
  const std::size_t hw = rows.dim(0), c = rows.dim(1);
  if (height * width != hw)
    throw ShapeError("from_rows: " + std::to_string(hw) + " rows cannot form " + std::to_string(height) + "x" +
                     std::to_string(width));
  auto rv = rows.values();
  std::vector<double> out(hw * c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = rv[p * c + ch];
  return emit(rows.tape(), Shape{1, c, height, width}, std::move(out), [rows, c, hw](std::span<const double> g, Tape& t) {
    auto gr = t.grad_buffer(rows.node());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) gr[p * c + ch] += g[ch * hw + p];
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& p : parts) require_rank(p, 4, "concat_channels");
  const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
      throw ShapeError("concat_channels: mismatched " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    c += p.dim(1);
  }
  const std::size_t plane = h * w;
  std::vector<double> out(n * c * plane);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    auto pv = p.values();
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(pv.data() + b * pc * plane, pc * plane, out.data() + (b * c + offset) * plane);
    offset += pc;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return emit(common_tape(parts), Shape{n, c, h, w}, std::move(out),
              [inputs = std::move(inputs), n, c, plane](std::span<const double> g, Tape& t) {
                std::size_t offset = 0;
                for (const auto& p : inputs) {
                  const std::size_t pc = p.dim(1);
                  if (p.tracked()) {
                    auto gp = t.grad_buffer(p.node());
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t i = 0; i < pc * plane; ++i)
                        gp[b * pc * plane + i] += g[(b * c + offset) * plane + i];
                  }
                  offset += pc;
                }
              });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  for (const auto& p : parts) require_rank(p, 2, "concat_rows");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.dim(1) != cols)
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return emit(common_tape(parts), Shape{rows, cols}, std::move(out),
              [inputs = std::move(inputs)](std::span<const double> g, Tape& t) {
                std::size_t offset = 0;
                for (const auto& p : inputs) {
                  accumulate_grad(t, p, g.subspan(offset, p.numel()));
                  offset += p.numel();
                }
              });
}

Tensor select_channel(const Tensor& x, std::size_t c) {
  require_rank(x, 4, "select_channel");
  auto [n, ch, h, w] = dims4(x);
  if (c >= ch) throw ShapeError("select_channel: channel " + std::to_string(c) + " of " + shape_str(x.shape()));
  const std::size_t plane = h * w;
  auto xv = x.values();
  std::vector<double> out(n * plane);
  for (std::size_t b = 0; b < n; ++b) std::copy_n(xv.data() + (b * ch + c) * plane, plane, out.data() + b * plane);
  return emit(x.tape(), Shape{n, 1, h, w}, std::move(out), [x, n, ch, c, plane](std::span<const double> g, Tape& t) {
    auto gx = t.grad_buffer(x.node());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < plane; ++i) gx[(b * ch + c) * plane + i] += g[b * plane + i];
  });
}

Tensor softmax_channels(const Tensor& x) {
  require_rank(x, 4, "softmax_channels");
  auto [n, c, h, w] = dims4(x);
  const std::size_t plane = h * w;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = b * c * plane + p;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t ch = 0; ch < c; ++ch) mx = std::max(mx, xv[base + ch * plane]);
      double total = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[base + ch * plane] = std::exp(xv[base + ch * plane] - mx);
        total += out[base + ch * plane];
      }
      for (std::size_t ch = 0; ch < c; ++ch) out[base + ch * plane] /= total;
    }
  if (!x.tracked()) return Tensor(x.shape(), std::move(out));
  std::vector<double> y(out);
  return x.tape()->record(x.shape(), std::move(out), [x, y = std::move(y), n, c, plane](std::span<const double> g, Tape& t) {
    auto gx = t.grad_buffer(x.node());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t base = b * c * plane + p;
        double dot = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) dot += g[base + ch * plane] * y[base + ch * plane];
        for (std::size_t ch = 0; ch < c; ++ch)
          gx[base + ch * plane] += y[base + ch * plane] * (g[base + ch * plane] - dot);
      }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return emit(x.tape(), Shape{1}, {s}, [x](std::span<const double> g, Tape& t) {
    auto gx = t.grad_buffer(x.node());
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace cycleseg::ops
