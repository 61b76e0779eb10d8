#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "copt/binio.hpp"
#include "copt/tensor.hpp"

namespace copt {

// NTF: "NTF1" | u8 dtype (0=f32, 1=u8) | u8 rank | rank x u32 dims | payload

enum class NtfDtype : std::uint8_t { f32 = 0, u8 = 1 };

struct NtfArray {
  NtfDtype dtype = NtfDtype::f32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline std::vector<std::uint8_t> encode_ntf(const NtfArray& a) {
  binio::Writer w;
  w.magic("NTF1");
  w.u8(static_cast<std::uint8_t>(a.dtype));
  w.u8(static_cast<std::uint8_t>(a.dims.size()));
  for (auto d : a.dims) w.u32(d);
  if (a.dtype == NtfDtype::f32)
    w.f32s(a.f32.data(), a.f32.size());
  else
    w.bytes(a.u8.data(), a.u8.size());
  return w.take();
}

inline NtfArray decode_ntf(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  binio::Reader r(bytes, context);
  r.expect_magic("NTF1");
  NtfArray a;
  const auto dtype = r.u8("dtype");
  if (dtype > 1) r.fail("unknown dtype " + std::to_string(dtype));
  a.dtype = static_cast<NtfDtype>(dtype);
  const auto rank = r.u8("rank");
  for (unsigned i = 0; i < rank; ++i) {
    a.dims.push_back(r.u32("dimension"));
    if (a.dims.back() == 0) r.fail("zero-sized dimension");
  }
  const std::size_t n = a.numel();
  if (a.dtype == NtfDtype::f32) {
    a.f32.resize(n);
    r.f32s(a.f32.data(), n, "f32 payload");
  } else {
    a.u8.resize(n);
    r.copy(a.u8.data(), n, "u8 payload");
  }
  if (!r.at_end()) r.fail("trailing bytes after payload");
  return a;
}

inline void write_tensor_ntf(const std::filesystem::path& path, const Tensor& t) {
  NtfArray a;
  a.dtype = NtfDtype::f32;
  for (auto d : t.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
  a.f32 = t.values();
  binio::write_file(path, encode_ntf(a));
}

inline void write_mask_ntf(const std::filesystem::path& path, const IntMask& m) {
  NtfArray a;
  a.dtype = NtfDtype::u8;
  a.dims = {static_cast<std::uint32_t>(m.height), static_cast<std::uint32_t>(m.width)};
  a.u8.reserve(m.size());
  for (auto v : m.labels) {
    if (v < 0 || v > 255) throw LabelError("write_mask_ntf: label " + std::to_string(v) + " does not fit u8");
    a.u8.push_back(static_cast<std::uint8_t>(v));
  }
  binio::write_file(path, encode_ntf(a));
}

inline Tensor read_tensor_ntf(const std::filesystem::path& path) {
  auto a = decode_ntf(binio::read_file(path), path.string());
  if (a.dtype != NtfDtype::f32) throw FormatError(path.string() + ": expected f32 tensor", 4);
  Shape s(a.dims.begin(), a.dims.end());
  return Tensor(std::move(s), std::move(a.f32));
}

inline IntMask read_mask_ntf(const std::filesystem::path& path) {
  auto a = decode_ntf(binio::read_file(path), path.string());
  if (a.dtype != NtfDtype::u8 || a.dims.size() != 2) throw FormatError(path.string() + ": expected u8 [H,W] mask", 4);
  IntMask m(a.dims[0], a.dims[1]);
  for (std::size_t i = 0; i < m.size(); ++i) m.labels[i] = a.u8[i];
  return m;
}

}  // namespace copt
