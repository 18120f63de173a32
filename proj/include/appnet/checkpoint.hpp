#pragma once

// Checkpoint file layout, all integers little-endian uint32:
//   "APPN1" | count | count x { name_len | name | rank | dims[rank] | f32[numel] }

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "appnet/tensor.hpp"

namespace appnet {

struct CheckpointRecord {
  std::string name;
  Shape dims;
  std::vector<float> values;

  bool operator==(const CheckpointRecord&) const = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline constexpr std::array<char, 5> kCheckpointMagic{'A', 'P', 'P', 'N', '1'};

inline std::string encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (shape_numel(r.dims) != r.values.size())
      throw std::invalid_argument("checkpoint: record '" + r.name + "' has inconsistent dims");
    detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    detail::put_u32(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : r.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::size_t pos = kCheckpointMagic.size();
  const auto count = detail::get_u32(bytes, pos);
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointRecord r;
    const auto len = detail::get_u32(bytes, pos);
    if (pos + len > bytes.size()) throw std::runtime_error("checkpoint: truncated name");
    r.name = bytes.substr(pos, len);
    pos += len;
    const auto rank = detail::get_u32(bytes, pos);
    for (std::uint32_t d = 0; d < rank; ++d) r.dims.push_back(detail::get_u32(bytes, pos));
    const auto n = shape_numel(r.dims);
    if (pos + 4 * n > bytes.size()) throw std::runtime_error("checkpoint: truncated values for '" + r.name + "'");
    r.values.resize(n);
    for (auto& f : r.values) f = std::bit_cast<float>(detail::get_u32(bytes, pos));
    records.push_back(std::move(r));
  }
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return records;
}

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  const auto bytes = encode_checkpoint(records);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace appnet
