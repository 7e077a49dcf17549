// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cycleseg/errors.hpp"

namespace cycleseg {

namespace {

using Rng = std::mt19937_64;

constexpr const char* kNames[kShapeKinds] = {"disk", "square", "triangle", "cross", "ring", "diamond"};

// splitmix64 finaliser, used to derive independent per-group seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool inside(const ShapeInstance& s, double px, double py) {
  const double dx = px - s.cx, dy = py - s.cy;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double u = c * dx + sn * dy;
  const double v = -sn * dx + c * dy;
  const double r = s.radius;
  switch (s.kind) {
    case ShapeKind::disk:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3025 * r * r;  // inner radius 0.55 r
    }
    case ShapeKind::square: {
      const double half = r * std::numbers::sqrt2 / 2.0;
      return std::abs(u) <= half && std::abs(v) <= half;
    }
    case ShapeKind::diamond:
      return std::abs(u) + std::abs(v) <= r;
    case ShapeKind::cross: {
      const double arm = r / 3.0;
      return (std::abs(u) <= r * 0.9 && std::abs(v) <= arm) || (std::abs(v) <= r * 0.9 && std::abs(u) <= arm);
    }
    case ShapeKind::triangle: {
      // Equilateral triangle with circumradius r, apex along -v.
      for (int k = 0; k < 3; ++k) {
        const double theta = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * k / 3.0;
        // Edge normals point away from the centre; distance to each edge is r / 2.
        if (u * std::cos(theta) + v * std::sin(theta) > r / 2.0) return false;
      }
      return true;
    }
  }
  return false;
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::array<double, 3> random_color(Rng& rng) {
  std::uniform_real_distribution<double> u(0.1, 0.95);
  return {u(rng), u(rng), u(rng)};
}

std::array<double, 3> color_away_from(Rng& rng, const std::vector<std::array<double, 3>>& avoid, double min_dist) {
  std::array<double, 3> best{};
  double best_dist = -1.0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto c = random_color(rng);
    double d = 1e9;
    for (const auto& a : avoid) d = std::min(d, color_distance(c, a));
    if (d >= min_dist) return c;
    if (d > best_dist) {
      best_dist = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

std::string shape_name(ShapeKind kind) { return kNames[static_cast<int>(kind)]; }

ShapeKind parse_shape(const std::string& name) {
  for (std::size_t i = 0; i < kShapeKinds; ++i)
    if (name == kNames[i]) return static_cast<ShapeKind>(i);
  throw InvalidConfig("unknown shape class '" + name + "'");
}

Mask rasterize(const ShapeInstance& shape, std::size_t height, std::size_t width) {
  Mask m(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      m(y, x) = inside(shape, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5) ? 1 : 0;
  return m;
}

void SceneSpec::validate() const {
  if (height < 16 || width < 16) throw InvalidConfig("canvas must be at least 16x16");
  if (common_classes.empty()) throw InvalidConfig("no common classes to draw from");
  if (min_radius <= 1.0 || max_radius < min_radius) throw InvalidConfig("bad radius range");
  if (2.0 * max_radius + 2.0 > static_cast<double>(std::min(height, width)))
    throw InvalidConfig("shapes do not fit the canvas");
  if (color_jitter < 0.0 || noise < 0.0) throw InvalidConfig("jitter and noise must be non-negative");
}

ImageGroup generate(const SceneSpec& spec, std::size_t group_size) {
  spec.validate();
  if (group_size < 2) throw InvalidConfig("a group needs at least two images");
  Rng rng(spec.seed);
  ImageGroup group;
  group.common = spec.common_classes[std::uniform_int_distribution<std::size_t>(0, spec.common_classes.size() - 1)(rng)];
  std::vector<ShapeKind> distractors;
  for (auto k : spec.distractor_classes)
    if (k != group.common) distractors.push_back(k);

  const auto base_color = random_color(rng);
  const std::size_t h = spec.height, w = spec.width;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> radius_dist(spec.min_radius, spec.max_radius);
  std::uniform_real_distribution<double> angle_dist(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-spec.color_jitter, spec.color_jitter);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto place = [&](ShapeInstance& s, const std::vector<ShapeInstance>& placed) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      s.cx = s.radius + 1.0 + unit(rng) * (static_cast<double>(w) - 2.0 * s.radius - 2.0);
      s.cy = s.radius + 1.0 + unit(rng) * (static_cast<double>(h) - 2.0 * s.radius - 2.0);
      bool clear = true;
      for (const auto& o : placed)
        if (std::hypot(s.cx - o.cx, s.cy - o.cy) < s.radius + o.radius + 2.0) clear = false;
      if (clear) return true;
    }
    return false;
  };

  for (std::size_t img = 0; img < group_size; ++img) {
    std::vector<ShapeInstance> shapes;
    ShapeInstance common;
    common.kind = group.common;
    common.radius = radius_dist(rng);
    common.angle = angle_dist(rng);
    for (int c = 0; c < 3; ++c) common.color[c] = std::clamp(base_color[c] + jitter(rng), 0.0, 1.0);
    place(common, shapes);
    shapes.push_back(common);

    const std::size_t n_distract =
        distractors.empty() ? 0 : std::uniform_int_distribution<std::size_t>(0, spec.max_distractors)(rng);
    std::vector<std::array<double, 3>> used_colors{base_color};
    for (std::size_t d = 0; d < n_distract; ++d) {
      ShapeInstance s;
      s.kind = distractors[std::uniform_int_distribution<std::size_t>(0, distractors.size() - 1)(rng)];
      s.radius = radius_dist(rng);
      s.angle = angle_dist(rng);
      s.color = color_away_from(rng, used_colors, 0.35);
      if (!place(s, shapes)) continue;
      used_colors.push_back(s.color);
      shapes.push_back(s);
    }
    const auto background = color_away_from(rng, used_colors, 0.35);

    std::vector<double> pixels(3 * h * w);
    for (int c = 0; c < 3; ++c) std::fill_n(pixels.begin() + c * h * w, h * w, background[c]);
    Mask mask(h, w);
    for (std::size_t si = 0; si < shapes.size(); ++si) {
      const Mask cover = rasterize(shapes[si], h, w);
      for (std::size_t p = 0; p < h * w; ++p) {
        if (!cover.values[p]) continue;
        for (int c = 0; c < 3; ++c) pixels[c * h * w + p] = shapes[si].color[c];
        mask.values[p] = si == 0 ? 1 : 0;
      }
    }
    for (auto& v : pixels) v = std::clamp(v + spec.noise * noise(rng), 0.0, 1.0);
    group.images.emplace_back(Shape{1, 3, h, w}, std::move(pixels));
    group.masks.push_back(std::move(mask));
  }
  return group;
}

std::vector<ImageGroup> generate_groups(const SceneSpec& spec, std::size_t count, std::size_t group_size) {
  std::vector<ImageGroup> groups;
  groups.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec s = spec;
    s.seed = mix_seed(spec.seed, i);
    groups.push_back(generate(s, group_size));
  }
  return groups;
}

SceneSpec train_scene(const ClassSplit& split, std::uint64_t seed) {
  SceneSpec s;
  s.common_classes = split.train;
  s.distractor_classes = split.train;
  s.seed = seed;
  return s;
}

SceneSpec test_scene(const ClassSplit& split, std::uint64_t seed) {
  SceneSpec s;
  s.common_classes = split.test;
  s.distractor_classes.clear();
  for (std::size_t i = 0; i < kShapeKinds; ++i) s.distractor_classes.push_back(static_cast<ShapeKind>(i));
  s.seed = seed;
  return s;
}

}  // namespace cycleseg
