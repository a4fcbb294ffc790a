#pragma once

// Little-endian encoding helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coinnet/error.hpp"

namespace coinnet::detail {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <class T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  std::vector<unsigned char>& buffer() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      fail(ErrorKind::Format, what_ + ": truncated at byte offset " + std::to_string(pos_) + " reading " + field +
                                  " (need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
    }
  }
  template <class T>
  T uint(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(uint<std::uint32_t>(field)); }
  double f64(const char* field) { return std::bit_cast<double>(uint<std::uint64_t>(field)); }
  void bytes(void* dst, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  [[noreturn]] void reject(std::size_t at, const std::string& why) const {
    fail(ErrorKind::Format, what_ + ": " + why + " at byte offset " + std::to_string(at));
  }

 private:
  std::span<const unsigned char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames over path.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace coinnet::detail
