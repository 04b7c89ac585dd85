// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

// Tensor file ("XMT1"), all integers and floats little-endian:
//
//   offset 0     magic      4 bytes  "XMT1"
//   offset 4     rank       u32      1..8
//   offset 8     dims       rank x u32, each > 0
//   then         payload    product(dims) x IEEE-754 binary64, row-major
//
// Named-tensor container ("XMC1"):
//
//   magic "XMC1" | u32 meta_len | meta_len bytes of UTF-8 JSON |
//   u32 count | count x ( u32 name_len | name bytes | tensor record )
//
// where a tensor record is a complete XMT1 encoding. Entries are written in
// lexicographic name order.

inline constexpr std::size_t kMaxTensorRank = 8;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
/// Decodes one tensor starting at `offset`, advancing it past the record.
/// Error offsets are absolute positions within `bytes`.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

struct NamedTensors {
  std::string metadata;  // JSON text, may be empty
  std::map<std::string, Tensor> tensors;
};

std::vector<std::uint8_t> encode_container(const NamedTensors& c);
NamedTensors decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const NamedTensors& c);
NamedTensors read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace xmodal
