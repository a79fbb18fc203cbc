#pragma once

// Little-endian binary encoding shared by the dataset, distilled-set, ZCA and
// trajectory-buffer formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ddprune/errors.hpp"

namespace ddprune::io {

class ByteWriter {
 public:
  template <class U>
    requires std::is_arithmetic_v<U>
  void put(U value) {
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    bytes_.insert(bytes_.end(), buf, buf + sizeof(U));
  }
  void put_magic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }
  // u32 length prefix followed by the raw bytes.
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  template <class U>
  void put_array(const U* values, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const unsigned char*>(values);
      bytes_.insert(bytes_.end(), p, p + n * sizeof(U));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(values[i]);
    }
  }

  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  template <class U>
    requires std::is_arithmetic_v<U>
  U get() {
    need(sizeof(U));
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    pos_ += sizeof(U);
    U value;
    std::memcpy(&value, buf, sizeof(U));
    return value;
  }
  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::string_view(reinterpret_cast<const char*>(bytes_.data() + pos_), magic.size()) != magic) {
      throw FormatError(source_ + ": bad magic, expected '" + std::string(magic) + "'");
    }
    pos_ += magic.size();
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <class U>
  void get_array(U* out, std::size_t n) {
    need(n * sizeof(U));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out, bytes_.data() + pos_, n * sizeof(U));
      pos_ += n * sizeof(U);
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = get<U>();
    }
  }
  void seek(std::size_t pos) { pos_ = pos; }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(source_ + ": truncated at offset " + std::to_string(pos_) + " (need " + std::to_string(n) +
                        " bytes, " + std::to_string(bytes_.size() - pos_) + " available)");
    }
  }

  std::vector<unsigned char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
std::vector<unsigned char> read_file_range(const std::filesystem::path& path, std::size_t offset, std::size_t length);
std::size_t file_size(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

template <class T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

}  // namespace ddprune::io
