// SPDX-License-Identifier: Apache-2.0
#pragma once

// PKWS tensor container, all integers and reals little-endian:
//
//   "PKWS"  u32 version  u32 count
//   count x { u32 name_len, name bytes, u8 flags, u32 rank, rank x u64 dim, f64 data[] }
//
// flags bit 0 marks a frozen tensor (dendrite input side).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pbp/tensor.hpp"

namespace pbp {

inline constexpr std::uint32_t kTensorFileVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors);
/// Throws ConfigError on a malformed buffer.
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);

/// Throws IoError when the file cannot be written or read.
void write_tensor_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

}  // namespace pbp
