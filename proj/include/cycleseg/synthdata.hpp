// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cycleseg/mask.hpp"
#include "cycleseg/tensor.hpp"

namespace cycleseg {

enum class ShapeKind : int { disk, square, triangle, cross, ring, diamond };
inline constexpr std::size_t kShapeKinds = 6;

std::string shape_name(ShapeKind kind);
ShapeKind parse_shape(const std::string& name);

struct ShapeInstance {
  ShapeKind kind = ShapeKind::disk;
  double cx = 0.0, cy = 0.0;  // pixel coordinates of the centre
  double radius = 1.0;        // circumscribed radius
  double angle = 0.0;         // radians
  std::array<double, 3> color{};
};

/// Pixel (x, y) is covered when its centre (x + 0.5, y + 0.5) is inside.
Mask rasterize(const ShapeInstance& shape, std::size_t height, std::size_t width);

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  /// Classes the shared object is drawn from.
  std::vector<ShapeKind> common_classes{ShapeKind::disk, ShapeKind::square, ShapeKind::triangle, ShapeKind::cross,
                                        ShapeKind::ring, ShapeKind::diamond};
  /// Classes distractors are drawn from (the common class is always excluded).
  std::vector<ShapeKind> distractor_classes{ShapeKind::disk,  ShapeKind::square, ShapeKind::triangle,
                                            ShapeKind::cross, ShapeKind::ring,   ShapeKind::diamond};
  std::size_t max_distractors = 2;
  double min_radius = 8.0;
  double max_radius = 14.0;
  /// Per-image uniform perturbation of the group's object colour.
  double color_jitter = 0.08;
  double noise = 0.04;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Images of one co-segmentation instance; masks mark the common object.
struct ImageGroup {
  std::vector<Tensor> images;  // 1 x 3 x H x W, values in [0,1]
  std::vector<Mask> masks;
  ShapeKind common = ShapeKind::disk;
};

/// Deterministic in spec.seed.
ImageGroup generate(const SceneSpec& spec, std::size_t group_size);

/// `count` groups; group i uses a seed derived from (spec.seed, i).
std::vector<ImageGroup> generate_groups(const SceneSpec& spec, std::size_t count, std::size_t group_size);

/// Common-class split: training groups never contain a test class at all.
struct ClassSplit {
  std::vector<ShapeKind> train{ShapeKind::disk, ShapeKind::square, ShapeKind::triangle, ShapeKind::cross};
  std::vector<ShapeKind> test{ShapeKind::ring, ShapeKind::diamond};
};

SceneSpec train_scene(const ClassSplit& split, std::uint64_t seed);
SceneSpec test_scene(const ClassSplit& split, std::uint64_t seed);

}  // namespace cycleseg
