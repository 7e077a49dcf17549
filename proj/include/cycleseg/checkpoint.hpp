// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cycleseg/tensor.hpp"

namespace cycleseg {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Checkpoint layout, all integers little-endian:
///   "CSGN" | u32 version (1) | u32 count |
///   count x ( u16 name_len | name bytes | u8 rank | rank x u32 dim | f64 values )
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace cycleseg
