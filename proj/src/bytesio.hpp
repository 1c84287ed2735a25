#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace geoloc {

// Explicit little-endian writers/readers for the GWDS/GENC/GPRT/GCDB binary
// formats. All multi-byte fields are serialized byte-wise so the files are
// bit-exact on any host.

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { raw_le(v); }
  void u32(std::uint32_t v) { raw_le(v); }
  void u64(std::uint64_t v) { raw_le(v); }
  void f32(float v) { raw_le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { raw_le(std::bit_cast<std::uint64_t>(v)); }
  void magic(const char (&m)[5]) { buf_.append(m, 4); }

  const std::string& bytes() const { return buf_; }

  void write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingArtifactError("cannot open for writing: " + path);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error("write failed: " + path);
  }

 private:
  template <typename T>
  void raw_le(T v) {
    for (std::size_t k = 0; k < sizeof(T); ++k)
      buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open: " + path);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return ByteReader(std::move(data));
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return raw_le<std::uint16_t>(); }
  std::uint32_t u32() { return raw_le<std::uint32_t>(); }
  std::uint64_t u64() { return raw_le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(raw_le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(raw_le<std::uint64_t>()); }

  void expect_magic(const char (&m)[5], const std::string& what) {
    const std::size_t at = pos_;
    const char* p = take(4);
    if (std::memcmp(p, m, 4) != 0)
      throw FormatError("bad magic for " + what, at);
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  void expect_end(const std::string& what) {
    if (!at_end())
      throw FormatError("trailing bytes after " + what, pos_);
  }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw FormatError("truncated input", pos_);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T raw_le() {
    const char* p = take(sizeof(T));
    T v = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k)
      v |= static_cast<T>(static_cast<unsigned char>(p[k])) << (8 * k);
    return v;
  }

  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace geoloc
