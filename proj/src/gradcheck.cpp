// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cycleseg/crm.hpp"
#include "cycleseg/errors.hpp"
#include "cycleseg/loss.hpp"
#include "cycleseg/ops.hpp"

namespace cycleseg {

namespace {

using Rng = std::mt19937_64;

// Gradients below this magnitude are exactly zero in theory (a softmax bias,
// say) and the central difference only returns roundoff, around 1e-11 at the
// default step. Their error is measured against this floor instead.
constexpr double kZeroGradient = 1e-6;

// Uniform in +-[lo, hi]: keeps ReLU inputs and max-pool candidates away from
// their kinks.
Tensor rand_t(const Shape& shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(shape, std::move(v));
}

Tensor uniform_t(const Shape& shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

double project(const std::vector<Tensor>& outs, const std::vector<Tensor>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    auto o = outs[i].values();
    auto w = weights[i].values();
    for (std::size_t j = 0; j < o.size(); ++j) s += o[j] * w[j];
  }
  return s;
}

template <class P>
std::vector<Tensor> collect(P p) {
  std::vector<Tensor> out;
  p.visit("p", [&](const std::string&, Tensor& t) {
    if (t.defined()) out.push_back(t);
  });
  return out;
}

template <class P>
P rebuild(P p, std::span<const Tensor> ts) {
  std::size_t i = 0;
  p.visit("p", [&](const std::string&, Tensor& t) {
    if (t.defined()) t = ts[i++];
  });
  return p;
}

template <class P>
P jitter(P p, Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  p.visit("p", [&](const std::string&, Tensor& t) {
    if (!t.defined()) return;
    std::vector<double> v(t.values().begin(), t.values().end());
    for (auto& x : v) x += n(rng);
    t = Tensor(t.shape(), std::move(v));
  });
  return p;
}

std::vector<Tensor> join(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

struct Suite {
  const GradcheckOptions& opts;
  Rng rng;
  std::vector<GradcheckEntry> out;

  void check(const std::string& name, const GradFn& f, const std::vector<Tensor>& inputs) {
    try {
      out.push_back(check_gradient(name, f, inputs, opts));
    } catch (const std::exception& e) {
      out.push_back({name + " (" + e.what() + ")", 0, std::numeric_limits<double>::infinity(), false});
    }
  }
};

void ops_suite(Suite& s) {
  auto& r = s.rng;
  const Shape m{1, 2, 3, 4};
  s.check("add", [](auto in) { return std::vector{ops::add(in[0], in[1])}; }, {rand_t(m, r), rand_t(m, r)});
  s.check("sub", [](auto in) { return std::vector{ops::sub(in[0], in[1])}; }, {rand_t(m, r), rand_t(m, r)});
  s.check("mul", [](auto in) { return std::vector{ops::mul(in[0], in[1])}; }, {rand_t(m, r), rand_t(m, r)});
  s.check("mul_shared_input", [](auto in) { return std::vector{ops::mul(in[0], in[0])}; }, {rand_t(m, r)});
  s.check("sigmoid", [](auto in) { return std::vector{ops::sigmoid(in[0])}; }, {rand_t(m, r, 0.0, 3.0)});
  s.check("tanh", [](auto in) { return std::vector{ops::tanh(in[0])}; }, {rand_t(m, r, 0.0, 3.0)});
  s.check("relu", [](auto in) { return std::vector{ops::relu(in[0])}; }, {rand_t(m, r)});
  s.check("scale", [](auto in) { return std::vector{ops::scale(in[0], -1.7)}; }, {rand_t(m, r)});
  s.check("add_channel_bias", [](auto in) { return std::vector{ops::add_channel_bias(in[0], in[1])}; },
          {rand_t(m, r), rand_t({2}, r)});
  s.check("conv2d_3x3_pad1", [](auto in) { return std::vector{ops::conv2d(in[0], in[1], in[2], 1, 1)}; },
          {rand_t({1, 2, 5, 5}, r), rand_t({3, 2, 3, 3}, r), rand_t({3}, r)});
  s.check("conv2d_3x3_stride2", [](auto in) { return std::vector{ops::conv2d(in[0], in[1], in[2], 2, 1)}; },
          {rand_t({1, 2, 6, 6}, r), rand_t({3, 2, 3, 3}, r), rand_t({3}, r)});
  s.check("conv2d_1x1_nobias", [](auto in) { return std::vector{ops::conv2d(in[0], in[1], Tensor{}, 1, 0)}; },
          {rand_t({1, 3, 4, 3}, r), rand_t({2, 3, 1, 1}, r)});
  s.check("matmul", [](auto in) { return std::vector{ops::matmul(in[0], in[1])}; },
          {rand_t({3, 4}, r), rand_t({4, 2}, r)});
  s.check("transpose", [](auto in) { return std::vector{ops::transpose(in[0])}; }, {rand_t({3, 4}, r)});
  s.check("softmax_rows", [](auto in) { return std::vector{ops::softmax_rows(in[0])}; }, {rand_t({3, 5}, r, 0.0, 2.0)});
  s.check("roi_avg_pool", [](auto in) { return std::vector{ops::pool(ops::Pool::roi_avg, in[0], 2, 3)}; },
          {rand_t({1, 2, 5, 7}, r)});
  s.check("roi_max_pool", [](auto in) { return std::vector{ops::pool(ops::Pool::roi_max, in[0], 2, 3)}; },
          {rand_t({1, 2, 5, 7}, r)});
  s.check("global_avg_pool", [](auto in) { return std::vector{ops::global_avg_pool(in[0])}; }, {rand_t(m, r)});
  s.check("upsample_bilinear", [](auto in) { return std::vector{ops::upsample_bilinear(in[0], 6, 8)}; },
          {rand_t(m, r)});
  s.check("upsample_broadcast", [](auto in) { return std::vector{ops::upsample_bilinear(in[0], 3, 2)}; },
          {rand_t({1, 2, 1, 1}, r)});
  s.check("to_rows", [](auto in) { return std::vector{ops::to_rows(in[0])}; }, {rand_t(m, r)});
  s.check("from_rows", [](auto in) { return std::vector{ops::from_rows(in[0], 3, 2)}; }, {rand_t({6, 4}, r)});
  s.check("concat_channels", [](auto in) { return std::vector{ops::concat_channels(in)}; },
          {rand_t(m, r), rand_t({1, 1, 3, 4}, r)});
  s.check("concat_rows", [](auto in) { return std::vector{ops::concat_rows(in)}; },
          {rand_t({2, 3}, r), rand_t({4, 3}, r)});
  s.check("select_channel", [](auto in) { return std::vector{ops::select_channel(in[0], 1)}; }, {rand_t(m, r)});
  s.check("softmax_channels", [](auto in) { return std::vector{ops::softmax_channels(in[0])}; },
          {rand_t({1, 3, 2, 3}, r, 0.0, 2.0)});
  s.check("sum", [](auto in) { return std::vector{ops::sum(in[0])}; }, {rand_t(m, r)});
  s.check("mean", [](auto in) { return std::vector{ops::mean(in[0])}; }, {rand_t(m, r)});

  const std::vector<std::uint8_t> member{1, 0, 0, 1, 1, 0, 1, 0, 0, 0};
  s.check("lovasz_extension", [member](auto in) { return std::vector{lovasz_extension(in[0], member)}; },
          {uniform_t({10}, r, 0.0, 1.0)});
  Mask gt(3, 4);
  for (std::size_t i = 0; i < gt.size(); ++i) gt.values[i] = (i * 7 + 3) % 5 < 2;
  s.check("class_errors", [gt](auto in) { return std::vector{class_errors(in[0], gt, 1)}; },
          {uniform_t({1, 2, 3, 4}, r, 0.0, 1.0)});
}

void module_suite(Suite& s) {
  auto& r = s.rng;
  const std::size_t w = 3;
  const Shape fm{1, w, 4, 4};

  // Both losses on a 5x6 map with a ragged foreground.
  Mask gt(5, 6);
  for (std::size_t y = 1; y < 4; ++y)
    for (std::size_t x = 2; x < 5; ++x) gt(y, x) = 1;
  gt(0, 0) = 1;
  s.check("lovasz_softmax", [gt](auto in) { return std::vector{lovasz_softmax(in[0], gt)}; },
          {rand_t({1, 2, 5, 6}, r, 0.0, 2.0)});
  s.check("cross_entropy", [gt](auto in) { return std::vector{cross_entropy(in[0], gt)}; },
          {rand_t({1, 2, 5, 6}, r, 0.0, 2.0)});

  for (bool standard : {false, true}) {
    const ConvLSTMParams lp = jitter(init_convlstm(5, w, r), r, 0.1);
    const auto params = collect(lp);
    auto f = [lp, standard](std::span<const Tensor> in) {
      const ConvLSTMParams p = rebuild(lp, in.subspan(3));
      const auto st = cell_step(in[0], {in[1], in[2]}, p, {standard});
      return std::vector{st.hidden, st.cell};
    };
    s.check(standard ? "convlstm_cell_standard" : "convlstm_cell", f,
            join({rand_t(fm, r), rand_t(fm, r), rand_t(fm, r)}, params));
  }
  {
    const ConvLSTMParams lp = jitter(init_convlstm(5, w, r), r, 0.1);
    auto f = [lp](std::span<const Tensor> in) {
      const auto st = init_state(in[0], rebuild(lp, in.subspan(1)));
      return std::vector{st.hidden, st.cell};
    };
    s.check("convlstm_init_state", f, join({rand_t({1, 5, 4, 4}, r)}, collect(lp)));
  }

  for (RoiSize roi : {RoiSize{2, 2}, RoiSize{3, 2}, RoiSize::raw()}) {
    const RCMParams rp = jitter(init_rcm(w, r), r, 0.1);
    auto f = [rp, roi](std::span<const Tensor> in) {
      const RCMParams p = rebuild(rp, in.subspan(2));
      const Tensor src[] = {in[1]};
      return std::vector{rcm_forward(in[0], region_bank(src, p, roi), src, p)};
    };
    const std::string name = roi.is_raw() ? "rcm_raw" : "rcm_roi" + std::to_string(roi.height) + "x" +
                                                            std::to_string(roi.width);
    s.check(name, f, join({rand_t(fm, r), rand_t(fm, r)}, collect(rp)));
  }
  {
    const RCMParams rp = jitter(init_rcm(w, r), r, 0.1);
    auto f = [rp](std::span<const Tensor> in) {
      const RCMParams p = rebuild(rp, in.subspan(3));
      return std::vector{rcm_group_forward(1, in.first(3), p, RoiSize{2, 2})};
    };
    s.check("rcm_group_k3", f, join({rand_t(fm, r), rand_t(fm, r), rand_t(fm, r)}, collect(rp)));
  }
  for (ExchangeKind kind : {ExchangeKind::cat, ExchangeKind::mul}) {
    const BaselineParams bp = jitter(init_baseline(w, r), r, 0.1);
    auto f = [bp, kind](std::span<const Tensor> in) {
      return std::vector{baseline_exchange(kind, in[0], in[1], rebuild(bp, in.subspan(2)))};
    };
    s.check("baseline_" + exchange_name(kind), f, join({rand_t(fm, r), rand_t(fm, r)}, collect(bp)));
  }
  {
    const CamParams cp = jitter(init_cam(4, r), r, 0.1);
    auto f = [cp](std::span<const Tensor> in) {
      return std::vector{cam_fuse(in[0], in[1], rebuild(cp, in.subspan(2)))};
    };
    s.check("cam_fuse", f, join({rand_t({1, 4, 6, 6}, r), rand_t({1, 4, 6, 6}, r)}, collect(cp)));
  }
  {
    EncoderConfig ec;
    ec.channels = {3, 4};
    const EncoderParams ep = jitter(init_encoder(ec, r), r, 0.05);
    auto f = [ep](std::span<const Tensor> in) { return encode(in[0], rebuild(ep, in.subspan(1))); };
    s.check("encoder", f, join({uniform_t({1, 3, 8, 8}, r, 0.0, 1.0)}, collect(ep)));

    const DecoderParams dp = jitter(init_decoder(ec, 4, 1, r), r, 0.1);
    auto g = [dp](std::span<const Tensor> in) {
      const Tensor skips[] = {in[1]};
      return std::vector{decode(in[0], skips, rebuild(dp, in.subspan(2)))};
    };
    s.check("decoder", g, join({rand_t({1, 4, 2, 2}, r), rand_t({1, 3, 4, 4}, r)}, collect(dp)));
  }

  struct CrmCase {
    const char* name;
    std::size_t branches;
    ExchangeKind exchange;
  };
  for (const CrmCase c : {CrmCase{"crm_n3_rcm", 2, ExchangeKind::rcm}, CrmCase{"crm_n3_rcm_k3", 3, ExchangeKind::rcm},
                          CrmCase{"crm_n3_cat", 2, ExchangeKind::cat}, CrmCase{"crm_n3_mul", 2, ExchangeKind::mul}}) {
    CRMConfig cfg;
    cfg.steps = 3;
    cfg.exchange = c.exchange;
    LevelParams lp{jitter(init_convlstm(w, w, r), r, 0.1), jitter(init_rcm(w, r), r, 0.1),
                   jitter(init_baseline(w, r), r, 0.1)};
    const std::size_t k = c.branches;
    auto f = [lp, cfg, k](std::span<const Tensor> in) {
      const LevelParams p = rebuild(lp, in.subspan(2 * k));
      std::vector<ConvLSTMState> init;
      for (std::size_t b = 0; b < k; ++b) init.push_back({in[2 * b], in[2 * b + 1]});
      const auto res = refine(init, cfg, p);
      std::vector<Tensor> outs;
      for (const auto& st : res.states) {
        outs.push_back(st.hidden);
        outs.push_back(st.cell);
      }
      return outs;
    };
    std::vector<Tensor> states;
    for (std::size_t b = 0; b < 2 * k; ++b) states.push_back(rand_t(fm, r));
    s.check(c.name, f, join(states, collect(lp)));
  }
}

void full_suite(Suite& s) {
  auto& r = s.rng;
  ModelConfig cfg;
  cfg.encoder.channels = {4, 8};
  cfg.levels = 2;
  cfg.lstm_width = 4;
  cfg.crm.steps = 3;
  ModelParams base = init_model(cfg, s.opts.seed);
  {
    // The zero-initialised head would zero every upstream gradient.
    std::vector<Tensor> ps = flat_tensors(base);
    std::normal_distribution<double> n(0.0, 0.05);
    for (auto& t : ps) {
      std::vector<double> v(t.values().begin(), t.values().end());
      for (auto& x : v) x += n(r);
      t = Tensor(t.shape(), std::move(v));
    }
    base = with_flat_tensors(base, ps);
  }
  std::vector<Mask> gts(2, Mask(16, 16));
  for (std::size_t y = 4; y < 11; ++y)
    for (std::size_t x = 3; x < 9; ++x) gts[0](y, x) = 1;
  for (std::size_t y = 6; y < 14; ++y)
    for (std::size_t x = 7; x < 13; ++x) gts[1](y, x) = 1;

  for (LossKind kind : {LossKind::lovasz, LossKind::cross_entropy}) {
    auto f = [base, cfg, gts, kind](std::span<const Tensor> in) {
      const ModelParams p = with_flat_tensors(base, std::vector<Tensor>(in.begin() + 2, in.end()));
      const auto fwd = forward_full(in.first(2), p, cfg);
      std::vector<Tensor> losses;
      for (std::size_t i = 0; i < 2; ++i)
        losses.push_back(kind == LossKind::lovasz ? lovasz_softmax(fwd.logits[i], gts[i])
                                                  : cross_entropy(fwd.logits[i], gts[i]));
      return losses;
    };
    const std::vector<Tensor> images{uniform_t({1, 3, 16, 16}, r, 0.0, 1.0), uniform_t({1, 3, 16, 16}, r, 0.0, 1.0)};
    s.check(kind == LossKind::lovasz ? "full_net_lovasz" : "full_net_cross_entropy", f,
            join(images, flat_tensors(base)));
  }
}

}  // namespace

GradcheckEntry check_gradient(const std::string& component, const GradFn& f, const std::vector<Tensor>& inputs,
                              const GradcheckOptions& options) {
  Rng rng(options.seed ^ std::hash<std::string>{}(component));
  const auto plain = f(inputs);
  std::vector<Tensor> weights;
  for (const auto& o : plain) weights.push_back(uniform_t(o.shape(), rng, -1.0, 1.0));

  Tape tape;
  std::vector<Tensor> watched;
  for (const auto& in : inputs) watched.push_back(tape.watch(in));
  const auto outs = f(watched);
  Tensor loss;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const Tensor term = ops::sum(ops::mul(outs[i], weights[i]));
    loss = loss.defined() ? ops::add(loss, term) : term;
  }
  // An output that ignores every input leaves nothing on the tape.
  if (loss.tracked()) tape.backward(loss);

  GradcheckEntry e;
  e.component = component;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = tape.grad(watched[i]);
    const std::size_t n = inputs[i].numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > options.max_coordinates) {
      std::vector<std::size_t> pick;
      std::sample(coords.begin(), coords.end(), std::back_inserter(pick), options.max_coordinates, rng);
      coords = std::move(pick);
    }
    double worst = 0.0, scale = 0.0;
    for (auto j : coords) {
      std::vector<double> v(inputs[i].values().begin(), inputs[i].values().end());
      auto eval = [&](double delta) {
        v[j] = inputs[i][j] + delta;
        std::vector<Tensor> moved = inputs;
        moved[i] = Tensor(inputs[i].shape(), v);
        return project(f(moved), weights);
      };
      auto central = [&](double h) { return (eval(h) - eval(-h)) / (2.0 * h); };
      // A ReLU or sort kink inside [x-h, x+h] corrupts the central difference.
      // Shrink the window until two successive steps agree.
      double h = options.step;
      double numeric = central(h);
      for (double next = central(h / 10.0); h > 1e-8; h /= 10.0, next = central(h / 10.0)) {
        if (std::abs(numeric - next) <= 1e-6 * std::max(std::abs(numeric), std::abs(next)) + 1e-9) break;
        numeric = next;
        if (h == options.step) ++e.kink_fallbacks;
      }
      const double a = analytic[j];
      worst = std::max(worst, std::abs(a - numeric));
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
    }
    e.coordinates += coords.size();
    e.worst_rel_error = std::max(e.worst_rel_error, worst / std::max(scale, kZeroGradient));
  }
  e.passed = e.worst_rel_error < options.tolerance;
  return e;
}

GradScope parse_grad_scope(const std::string& name) {
  if (name == "ops") return GradScope::ops;
  if (name == "modules") return GradScope::modules;
  if (name == "full") return GradScope::full;
  throw InvalidConfig("unknown gradcheck scope '" + name + "' (expected ops, modules or full)");
}

std::vector<GradcheckEntry> run_gradcheck(GradScope scope, const GradcheckOptions& options) {
  Suite s{options, Rng(options.seed), {}};
  ops_suite(s);
  if (scope == GradScope::modules || scope == GradScope::full) module_suite(s);
  if (scope == GradScope::full) full_suite(s);
  return s.out;
}

}  // namespace cycleseg
