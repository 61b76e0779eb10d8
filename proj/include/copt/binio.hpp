#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "copt/errors.hpp"

namespace copt::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

/// Writes through a sibling temp file and renames, so readers never observe a
/// half-written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32s(const float* p, std::size_t n) { bytes(p, n * 4); }

  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& buffer() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked cursor; every failure reports the offset where it happened.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string context)
      : data_(data), size_(size), context_(std::move(context)) {}
  explicit Reader(const std::vector<std::uint8_t>& v, std::string context = "")
      : Reader(v.data(), v.size(), std::move(context)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  bool at_end() const { return pos_ == size_; }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(prefix() + what, base_ + pos_); }

  void need(std::size_t n, const char* what) const {
    if (size_ - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(data_ + pos_, m.data(), m.size()) != 0) fail("bad magic, expected \"" + std::string(m) + "\"");
    pos_ += m.size();
  }
  void copy(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8(const char* what = "u8") {
    std::uint8_t v;
    copy(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what = "u32") {
    std::uint32_t v;
    copy(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what = "u64") {
    std::uint64_t v;
    copy(&v, 8, what);
    return v;
  }
  float f32(const char* what = "f32") {
    float v;
    copy(&v, 4, what);
    return v;
  }
  double f64(const char* what = "f64") {
    double v;
    copy(&v, 8, what);
    return v;
  }
  std::string str(const char* what = "string") {
    const auto n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void f32s(float* dst, std::size_t n, const char* what) { copy(dst, n * 4, what); }
  Reader sub(std::size_t n, std::string context) {
    need(n, "section");
    Reader r(data_ + pos_, n, std::move(context));
    r.base_ = base_ + pos_;
    pos_ += n;
    return r;
  }

 private:
  std::string prefix() const { return context_.empty() ? "" : context_ + ": "; }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::size_t base_ = 0;
  std::string context_;
};

}  // namespace copt::binio
