#pragma once

// Little-endian binary helpers shared by the MTKD and MTKW formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtk/error.hpp"

namespace mtk::detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

class ByteWriter {
 public:
  void raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f32_array(std::span<const float> values) {
    std::size_t at = buf_.size();
    buf_.resize(at + 4 * values.size());
    if constexpr (std::endian::native == std::endian::little) {
      if (!values.empty()) std::memcpy(buf_.data() + at, values.data(), 4 * values.size());
    } else {
      for (float f : values) {
        auto bits = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) buf_[at++] = static_cast<char>(bits >> (8 * i));
      }
    }
  }

  void u16_array(std::span<const std::uint16_t> values) {
    for (auto v : values) u16(v);
  }

  const std::vector<char>& bytes() const noexcept { return buf_; }

  void write_file(const std::filesystem::path& path) const { detail::write_file(path, buf_); }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  static ByteReader from_file(const std::filesystem::path& path) { return ByteReader(read_file(path)); }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }

  void f32_array(std::span<float> out, const char* what) {
    need(4 * out.size(), what);
    if constexpr (std::endian::native == std::endian::little) {
      if (!out.empty()) std::memcpy(out.data(), buf_.data() + pos_, 4 * out.size());
      pos_ += 4 * out.size();
    } else {
      for (float& f : out) {
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
        f = std::bit_cast<float>(bits);
      }
    }
  }

  void u16_array(std::span<std::uint16_t> out, const char* what) {
    need(2 * out.size(), what);
    for (auto& v : out) v = u16(what);
  }

  void expect_end() const {
    if (pos_ != buf_.size()) throw FormatError("unexpected trailing bytes", pos_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace mtk::detail
