#pragma once

// Little-endian encoding helpers for the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irtnet/error.hpp"

namespace irtnet::binary {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename UInt>
  void uint(UInt value) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
  }

  void f32(float value) { uint(std::bit_cast<std::uint32_t>(value)); }

  const std::vector<char>& buffer() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::span<const char> data, std::string source) : data_(data), source_(std::move(source)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  template <typename UInt>
  UInt uint() {
    need(sizeof(UInt));
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      value |= static_cast<UInt>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return value;
  }

  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(source_ + ": truncated file");
  }

  std::span<const char> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const char> data);

}  // namespace irtnet::binary
