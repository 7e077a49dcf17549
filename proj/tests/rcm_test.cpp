// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cycleseg/errors.hpp"
#include "cycleseg/ops.hpp"
#include "cycleseg/rcm.hpp"
#include "oracle.hpp"

using namespace cycleseg;

namespace {

using Rows = std::vector<std::vector<double>>;

// Region rows of one source by direct loops: floor-partitioned bins, average
// and max per channel, then the 1x1 fuse conv over [avg, max].
Rows bank_loop(const Tensor& src, const RCMParams& p, std::size_t bh, std::size_t bw) {
  const std::size_t C = src.dim(1), H = src.dim(2), W = src.dim(3);
  Rows rows;
  for (std::size_t by = 0; by < bh; ++by)
    for (std::size_t bx = 0; bx < bw; ++bx) {
      std::vector<double> avg(C, 0.0), mx(C, -1e300);
      const std::size_t y0 = by * H / bh, y1 = (by + 1) * H / bh, x0 = bx * W / bw, x1 = (bx + 1) * W / bw;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) {
            avg[c] += src.at(0, c, y, x);
            mx[c] = std::max(mx[c], src.at(0, c, y, x));
          }
        avg[c] /= static_cast<double>((y1 - y0) * (x1 - x0));
      }
      std::vector<double> row(C);
      for (std::size_t o = 0; o < C; ++o) {
        double s = p.fuse.bias[o];
        for (std::size_t c = 0; c < C; ++c) s += p.fuse.weight[o * 2 * C + c] * avg[c] + p.fuse.weight[o * 2 * C + C + c] * mx[c];
        row[o] = s;
      }
      rows.push_back(row);
    }
  return rows;
}

std::vector<double> project(const ConvLayer& conv, const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < v.size(); ++o) {
    double s = conv.bias[o];
    for (std::size_t c = 0; c < v.size(); ++c) s += conv.weight[o * v.size() + c] * v[c];
    out[o] = std::max(s, 0.0);
  }
  return out;
}

// Attention by loops: softmax over dot products of ReLU projections, then
// the weighted sum of bank rows. Result is in target layout.
Tensor attend_loop(const Tensor& target, const Rows& bank, const RCMParams& p) {
  const std::size_t C = target.dim(1), H = target.dim(2), W = target.dim(3);
  std::vector<std::vector<double>> keys;
  for (const auto& r : bank) keys.push_back(project(p.project_source, r));
  std::vector<double> out(C * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      std::vector<double> q(C);
      for (std::size_t c = 0; c < C; ++c) q[c] = target.at(0, c, y, x);
      q = project(p.project_target, q);
      std::vector<double> s(bank.size());
      for (std::size_t j = 0; j < bank.size(); ++j)
        for (std::size_t c = 0; c < C; ++c) s[j] += q[c] * keys[j][c];
      const double top = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& v : s) z += (v = std::exp(v - top));
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < bank.size(); ++j) acc += s[j] / z * bank[j][c];
        out[(c * H + y) * W + x] = acc;
      }
    }
  return Tensor({1, C, H, W}, out);
}

RCMParams params(std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  return init_rcm(width, rng);
}

}  // namespace

TEST(RegionBank, ConstantSourceGivesEqualRows) {
  const auto p = params(3, 1);
  const Tensor src({1, 3, 6, 6}, 0.4);
  const Tensor one[] = {src};
  const auto bank = region_bank(one, p, {});
  EXPECT_EQ(bank.rows.shape(), (Shape{4, 3}));
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(bank.rows[r * 3 + c], bank.rows[c]);
  const auto want = bank_loop(src, p, 1, 1)[0];
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(bank.rows[c], want[c], 1e-14);
}

TEST(RegionBank, TwoSourcesGiveEightRows) {
  const auto p = params(4, 2);
  oracle::Rng rng(3);
  const Tensor two[] = {oracle::random_tensor({1, 4, 4, 4}, rng), oracle::random_tensor({1, 4, 4, 4}, rng)};
  const auto bank = region_bank(two, p, {});
  EXPECT_EQ(bank.rows.dim(0), 8u);
  EXPECT_EQ(bank.sources, 2u);
  EXPECT_EQ(bank.rows_per_source, 4u);
}

TEST(RegionBank, FiveByFiveMatchesLoop) {
  const auto p = params(3, 4);
  oracle::Rng rng(5);
  const Tensor src = oracle::random_tensor({1, 3, 5, 5}, rng);
  const Tensor one[] = {src};
  for (auto roi : {RoiSize{2, 2}, RoiSize{3, 2}, RoiSize{1, 1}}) {
    const auto bank = region_bank(one, p, roi);
    const auto want = bank_loop(src, p, roi.height, roi.width);
    ASSERT_EQ(bank.rows.dim(0), want.size());
    for (std::size_t r = 0; r < want.size(); ++r)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(bank.rows[r * 3 + c], want[r][c], 1e-13);
  }
}

TEST(RegionBank, RawModeKeepsEveryPixel) {
  const auto p = params(2, 6);
  const Tensor one[] = {Tensor::zeros({1, 2, 3, 4})};
  EXPECT_EQ(region_bank(one, p, RoiSize::raw()).rows.dim(0), 12u);
  EXPECT_THROW(region_bank({}, p, {}), EmptyGroup);
  const Tensor bad[] = {Tensor::zeros({1, 2, 3, 4}), Tensor::zeros({1, 3, 3, 4})};
  EXPECT_THROW(region_bank(bad, p, {}), ShapeError);
}

TEST(Attend, IdenticalRowsGiveThatRow) {
  const auto p = params(3, 7);
  oracle::Rng rng(8);
  const Tensor v({1, 3}, std::vector<double>{0.3, -0.2, 0.9});
  const Tensor rows[] = {v, v, v, v};
  const RegionBank bank{ops::concat_rows(rows), 1, 4};
  const Tensor target = oracle::random_tensor({1, 3, 3, 3}, rng, -2, 2);
  const Tensor x = attend(target, bank, p);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(x[c * 9 + k], v[c], 1e-14);
  const Tensor src = oracle::random_tensor({1, 3, 4, 4}, rng);
  const Tensor globals[] = {src};
  const Tensor out = rcm_forward(target, bank, globals, p);
  const Tensor g = ops::global_avg_pool(src);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[c * 9 + 4], (v[c] + g[c]) / 2, 1e-14);
}

TEST(Attend, MatchesLoopOracle) {
  const auto p = params(4, 9);
  oracle::Rng rng(10);
  const Tensor target = oracle::random_tensor({1, 4, 3, 5}, rng);
  const Tensor bank_rows = oracle::random_tensor({2, 4}, rng);
  Rows rows(2, std::vector<double>(4));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) rows[r][c] = bank_rows[r * 4 + c];
  const Tensor got = attend(target, {bank_rows, 1, 2}, p);
  EXPECT_LT(max_abs_diff(got, attend_loop(target, rows, p)), 1e-13);
}

TEST(Attend, RowsAreStochasticAndConvex) {
  const auto p = params(4, 11);
  oracle::Rng rng(12);
  const Tensor target = oracle::random_tensor({1, 4, 4, 4}, rng, -3, 3);
  const Tensor srcs[] = {oracle::random_tensor({1, 4, 6, 6}, rng, -3, 3)};
  const auto bank = region_bank(srcs, p, {});
  const Tensor w = ops::softmax_rows(affinity(target, bank, p));
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.dim(1); ++c) s += w[r * w.dim(1) + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const Tensor x = attend(target, bank, p);
  for (std::size_t c = 0; c < 4; ++c) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t r = 0; r < bank.rows.dim(0); ++r) {
      lo = std::min(lo, bank.rows[r * 4 + c]);
      hi = std::max(hi, bank.rows[r * 4 + c]);
    }
    for (std::size_t k = 0; k < 16; ++k) {
      EXPECT_GE(x[c * 16 + k], lo - 1e-12);
      EXPECT_LE(x[c * 16 + k], hi + 1e-12);
    }
  }
}

TEST(Attend, SharedKeyShiftLeavesAttentionUnchanged) {
  // With every projected key positive, moving the source bias shifts all keys
  // by one vector, which adds a per-row constant to the affinities.
  auto p = params(3, 13);
  p.project_source.bias = Tensor({3}, 10.0);
  oracle::Rng rng(14);
  const Tensor target = oracle::random_tensor({1, 3, 3, 3}, rng);
  const Tensor srcs[] = {oracle::random_tensor({1, 3, 4, 4}, rng)};
  const auto bank = region_bank(srcs, p, {});
  const Tensor before = attend(target, bank, p);
  auto shifted = p;
  shifted.project_source.bias = Tensor({3}, std::vector<double>{10.5, 9.25, 11.0});
  EXPECT_LT(max_abs_diff(before, attend(target, bank, shifted)), 1e-12);
}

TEST(GroupForward, PairMatchesPairwisePathBitwise) {
  const auto p = params(4, 15);
  oracle::Rng rng(16);
  const Tensor a = oracle::random_tensor({1, 4, 4, 4}, rng), b = oracle::random_tensor({1, 4, 4, 4}, rng);
  const Tensor cells[] = {a, b};
  const Tensor sb[] = {b}, sa[] = {a};
  EXPECT_TRUE(identical(rcm_group_forward(0, cells, p, {}), rcm_forward(a, region_bank(sb, p, {}), sb, p)));
  // Swapping the roles of the two images is the mirrored computation.
  EXPECT_TRUE(identical(rcm_group_forward(1, cells, p, {}), rcm_forward(b, region_bank(sa, p, {}), sa, p)));
}

TEST(GroupForward, ThreeBranchesMatchLoopAndIgnoreOrder) {
  const auto p = params(3, 17);
  oracle::Rng rng(18);
  const Tensor a = oracle::random_tensor({1, 3, 4, 4}, rng), b = oracle::random_tensor({1, 3, 4, 4}, rng);
  const Tensor c = oracle::random_tensor({1, 3, 4, 4}, rng);
  const Tensor abc[] = {a, b, c}, acb[] = {a, c, b}, bca[] = {b, c, a};
  const Tensor out = rcm_group_forward(0, abc, p, {});
  EXPECT_TRUE(identical(out, rcm_group_forward(0, acb, p, {})));
  EXPECT_TRUE(identical(out, rcm_group_forward(2, bca, p, {})));

  Rows rows = bank_loop(b, p, 2, 2);
  const Rows rc = bank_loop(c, p, 2, 2);
  rows.insert(rows.end(), rc.begin(), rc.end());
  ASSERT_EQ(rows.size(), 8u);
  const Tensor attended = attend_loop(a, rows, p);
  const Tensor gb = ops::global_avg_pool(b), gc = ops::global_avg_pool(c);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t k = 0; k < 16; ++k)
      EXPECT_NEAR(out[ch * 16 + k], (attended[ch * 16 + k] + (gb[ch] + gc[ch]) / 2) / 2, 1e-13);
}

TEST(GroupForward, Errors) {
  const auto p = params(2, 19);
  const Tensor one[] = {Tensor::zeros({1, 2, 2, 2})};
  EXPECT_THROW(rcm_group_forward(0, one, p, {}), GroupTooSmall);
  const Tensor two[] = {Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1, 2, 2, 2})};
  EXPECT_THROW(rcm_group_forward(2, two, p, {}), ShapeError);
}

TEST(GroupForward, GradientMatchesFiniteDifferences) {
  const auto base = params(3, 20);
  oracle::Rng rng(21);
  const std::vector<Tensor> cells{oracle::random_tensor({1, 3, 4, 4}, rng), oracle::random_tensor({1, 3, 4, 4}, rng),
                                  oracle::random_tensor({1, 3, 4, 4}, rng)};
  const Tensor w = oracle::weights_like(cells[0]);
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    RCMParams p = base;
    p.project_target.weight = in[3];
    p.fuse.weight = in[4];
    return oracle::readout(rcm_group_forward(0, in.first(3), p, {}), w);
  };
  auto inputs = cells;
  inputs.push_back(base.project_target.weight);
  inputs.push_back(base.fuse.weight);
  EXPECT_LT(oracle::gradient_error(f, inputs, 1e-4), 1e-4);
}

TEST(Baselines, MulNoneAndCat) {
  Rng init(22);
  const auto bp = init_baseline(3, init);
  oracle::Rng rng(23);
  const Tensor target = oracle::random_tensor({1, 3, 4, 4}, rng);
  EXPECT_TRUE(identical(baseline_exchange(ExchangeKind::mul, target, Tensor::ones({1, 3, 2, 2}), bp), target));
  EXPECT_TRUE(identical(baseline_exchange(ExchangeKind::none, target, oracle::random_tensor({1, 3, 4, 4}, rng), bp), target));
  EXPECT_EQ(baseline_exchange(ExchangeKind::cat, target, oracle::random_tensor({1, 3, 4, 4}, rng), bp).shape(),
            target.shape());
  EXPECT_THROW(baseline_exchange(ExchangeKind::rcm, target, target, bp), InvalidConfig);
  EXPECT_THROW(baseline_exchange(ExchangeKind::mul, target, Tensor::zeros({1, 2, 4, 4}), bp), ShapeError);
}

TEST(Baselines, ExchangeNamesRoundTrip) {
  for (auto k : {ExchangeKind::rcm, ExchangeKind::cat, ExchangeKind::mul, ExchangeKind::none})
    EXPECT_EQ(parse_exchange(exchange_name(k)), k);
  EXPECT_THROW(parse_exchange("cross"), InvalidConfig);
}
