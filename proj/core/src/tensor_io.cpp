// SPDX-License-Identifier: Apache-2.0
#include "xmodal/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

constexpr char kTensorMagic[4] = {'X', 'M', 'T', '1'};
constexpr char kContainerMagic[4] = {'X', 'M', 'C', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void need(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t n,
          const char* what) {
  if (bytes.size() < offset || bytes.size() - offset < n) {
    throw FormatError(bytes.size(), std::string("truncated ") + what + ": needed " +
                                        std::to_string(n) + " bytes at offset " +
                                        std::to_string(offset) + ", file ends");
  }
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& offset, const char* what) {
  need(bytes, offset, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[offset + i]} << (8 * i);
  offset += 4;
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t& offset, const char* what) {
  need(bytes, offset, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[offset + i]} << (8 * i);
  offset += 8;
  return v;
}

void expect_magic(std::span<const std::uint8_t> bytes, std::size_t& offset, const char (&magic)[4]) {
  need(bytes, offset, 4, "magic");
  if (std::memcmp(bytes.data() + offset, magic, 4) != 0) {
    std::string got(reinterpret_cast<const char*>(bytes.data() + offset), 4);
    throw FormatError(offset, "bad magic '" + got + "', expected '" + std::string(magic, 4) + "'");
  }
  offset += 4;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > kMaxTensorRank) {
    throw ArgumentError("cannot encode tensor of rank " + std::to_string(t.rank()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.rank() + 8 * t.size());
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > UINT32_MAX) throw ArgumentError("tensor extent exceeds 32 bits");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  expect_magic(bytes, offset, kTensorMagic);
  const std::size_t rank_at = offset;
  const std::uint32_t rank = get_u32(bytes, offset, "tensor rank");
  if (rank == 0 || rank > kMaxTensorRank) {
    throw FormatError(rank_at, "tensor rank " + std::to_string(rank) + " outside 1.." +
                                   std::to_string(kMaxTensorRank));
  }
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    const std::size_t at = offset;
    d = get_u32(bytes, offset, "tensor dims");
    if (d == 0) throw FormatError(at, "zero tensor extent");
    count *= d;
    if (count > (std::uint64_t{1} << 40)) throw FormatError(at, "tensor too large");
  }
  need(bytes, offset, count * 8, "tensor payload");
  std::vector<double> data(count);
  for (auto& v : data) v = std::bit_cast<double>(get_u64(bytes, offset, "tensor payload"));
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(0, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file_bytes(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  try {
    Tensor t = decode_tensor(bytes, offset);
    if (offset != bytes.size()) {
      throw FormatError(offset, std::to_string(bytes.size() - offset) + " trailing bytes");
    }
    return t;
  } catch (const FormatError& e) {
    throw FormatError(e.offset(), path.string() + ": " + e.detail());
  }
}

std::vector<std::uint8_t> encode_container(const NamedTensors& c) {
  std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
  put_u32(out, static_cast<std::uint32_t>(c.metadata.size()));
  out.insert(out.end(), c.metadata.begin(), c.metadata.end());
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto rec = encode_tensor(t);
    out.insert(out.end(), rec.begin(), rec.end());
  }
  return out;
}

NamedTensors decode_container(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  expect_magic(bytes, offset, kContainerMagic);
  NamedTensors c;
  const std::uint32_t meta_len = get_u32(bytes, offset, "metadata length");
  need(bytes, offset, meta_len, "metadata");
  c.metadata.assign(reinterpret_cast<const char*>(bytes.data() + offset), meta_len);
  offset += meta_len;
  const std::uint32_t count = get_u32(bytes, offset, "entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(bytes, offset, "entry name length");
    need(bytes, offset, name_len, "entry name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + offset), name_len);
    const std::size_t name_at = offset;
    offset += name_len;
    Tensor t = decode_tensor(bytes, offset);
    if (!c.tensors.emplace(std::move(name), std::move(t)).second) {
      throw FormatError(name_at, "duplicate entry name");
    }
  }
  if (offset != bytes.size()) {
    throw FormatError(offset, std::to_string(bytes.size() - offset) + " trailing bytes");
  }
  return c;
}

void write_container(const std::filesystem::path& path, const NamedTensors& c) {
  write_file_bytes(path, encode_container(c));
}

NamedTensors read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace xmodal
