// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cycleseg/mask.hpp"
#include "cycleseg/synthdata.hpp"
#include "cycleseg/tensor.hpp"

namespace cycleseg {

/// Binary P6, 8-bit; channel values are stored as round(v * 255) after
/// clamping to [0,1].
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
/// 1 x 3 x H x W tensor with values byte / 255.
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);

/// Binary P5 with 0 for background and 255 for foreground.
std::vector<std::uint8_t> encode_pgm(const Mask& mask);
/// Any nonzero byte reads as foreground.
Mask decode_pgm(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm(const std::filesystem::path& path);

/// Writes every group as g<index>_<image>.ppm / .pgm under `dir` plus a
/// manifest.tsv with one line per group: image and mask paths alternating,
/// tab-separated, relative to `dir`.
void save_dataset(const std::filesystem::path& dir, const std::vector<ImageGroup>& groups);
/// Reads a manifest written by save_dataset. Shape classes are not stored.
std::vector<ImageGroup> load_dataset(const std::filesystem::path& manifest);

}  // namespace cycleseg
