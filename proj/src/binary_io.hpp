#pragma once

// Little-endian byte packing shared by the descriptor store and model files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "histopipe/error.hpp"

namespace histopipe::detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<char>& buffer() const noexcept { return buf_; }
  std::vector<char>& buffer() noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Bounds-checked reader; running off the end throws `code`.
class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size, ErrorCode code)
      : data_(data), size_(size), code_(code) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view out(data_ + pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw Error(code_, "unexpected end of data");
  }

  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  ErrorCode code_;
};

std::vector<char> read_file_bytes(const std::string& path, ErrorCode missing);
/// Writes to a sibling temporary and renames, so readers never see a torn file.
void write_file_atomic(const std::string& path, const std::vector<char>& bytes);

std::string hex64(std::uint64_t v);

}  // namespace histopipe::detail
