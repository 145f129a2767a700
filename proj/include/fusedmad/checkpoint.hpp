#pragma once

// Parameter checkpoint file:
//
//   magic   8 bytes  "FMADCKPT"
//   version 1 byte   (1)
//   count   u32 LE   number of records
//   record  u32 LE name length, name bytes,
//           u32 LE rank, rank x u64 LE dims,
//           product(dims) x float64 LE values
//
// Records are written in name order, so identical parameter sets give
// identical bytes.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusedmad/numgrad.hpp"

namespace fusedmad {

inline constexpr std::array<char, 8> kCheckpointMagic = {'F', 'M', 'A', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const numgrad::NamedArrays& params) {
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  out.push_back(kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, arr] : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arr.rank()));
    for (std::size_t d : arr.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : arr.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline numgrad::NamedArrays decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 1 ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  if (bytes[kCheckpointMagic.size()] != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(bytes[kCheckpointMagic.size()]));
  }
  std::vector<unsigned char> body(bytes.begin() + kCheckpointMagic.size() + 1, bytes.end());
  detail::ByteReader in(body);
  const auto count = in.get_le<std::uint32_t>();
  numgrad::NamedArrays params;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto name_len = in.get_le<std::uint32_t>();
    std::string name = in.get_string(name_len);
    const auto rank = in.get_le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get_le<std::uint64_t>());
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
    try {
      params.insert_or_assign(name, DenseArray(std::move(shape), std::move(values)));
    } catch (const std::invalid_argument& e) {
      throw CheckpointError("record '" + name + "': " + e.what());
    }
  }
  if (!in.done()) throw CheckpointError("trailing bytes after last checkpoint record");
  return params;
}

inline void save_checkpoint(const std::string& path, const numgrad::NamedArrays& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline numgrad::NamedArrays load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fusedmad
