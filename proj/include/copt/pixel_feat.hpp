#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "copt/ops.hpp"

namespace copt {

inline constexpr std::int32_t kIgnoreIndex = 255;

enum class DownsamplePolicy { nearest, majority };
enum class FeatureNormalization { total, count };

inline std::string_view to_string(DownsamplePolicy p) { return p == DownsamplePolicy::nearest ? "nearest" : "majority"; }
inline std::string_view to_string(FeatureNormalization n) { return n == FeatureNormalization::total ? "total" : "count"; }

inline DownsamplePolicy parse_downsample_policy(std::string_view s) {
  if (s == "nearest") return DownsamplePolicy::nearest;
  if (s == "majority") return DownsamplePolicy::majority;
  throw ConfigError("unknown downsample policy '" + std::string(s) + "' (expected nearest|majority)");
}

inline FeatureNormalization parse_normalization(std::string_view s) {
  if (s == "total") return FeatureNormalization::total;
  if (s == "count") return FeatureNormalization::count;
  throw ConfigError("unknown normalization '" + std::string(s) + "' (expected total|count)");
}

/// Reduces a label map by `r` in each direction. `nearest` keeps the top-left
/// label of each block; `majority` keeps the most frequent label (smallest id
/// on ties). The ignore label takes part in the vote like any other.
inline IntMask downsample_mask(const IntMask& y, std::size_t r, DownsamplePolicy policy = DownsamplePolicy::nearest) {
  if (r == 0 || y.height % r != 0 || y.width % r != 0)
    throw DimensionError("downsample_mask: factor " + std::to_string(r) + " does not divide " +
                         std::to_string(y.height) + "x" + std::to_string(y.width));
  const std::size_t h = y.height / r, w = y.width / r;
  IntMask out(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (policy == DownsamplePolicy::nearest) {
        out.at(i, j) = y.at(i * r, j * r);
        continue;
      }
      std::map<std::int32_t, int> counts;
      for (std::size_t di = 0; di < r; ++di)
        for (std::size_t dj = 0; dj < r; ++dj) ++counts[y.at(i * r + di, j * r + dj)];
      std::int32_t best = counts.begin()->first;
      int best_n = counts.begin()->second;
      for (auto [label, n] : counts)
        if (n > best_n) best = label, best_n = n;
      out.at(i, j) = best;
    }
  return out;
}

/// 0/1 map of where the downsampled labels equal `c`.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(std::size_t i, std::size_t j) const { return bits[i * width + j]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
};

inline BinaryMask class_binary_mask(const IntMask& y_small, std::int32_t c) {
  BinaryMask b{y_small.height, y_small.width, std::vector<std::uint8_t>(y_small.size())};
  for (std::size_t p = 0; p < y_small.size(); ++p) b.bits[p] = y_small.labels[p] == c ? 1 : 0;
  return b;
}

template <typename T>
struct ClassPixelFeature {
  int class_id = 0;
  BasicTensor<T> vector;
  std::size_t pixel_count = 0;
};

/// Masked spatial average of a [D,h,w] feature map. `total` divides by h*w,
/// `count` by the number of masked pixels. An empty mask yields zeros.
template <typename T>
ClassPixelFeature<T> masked_spatial_average(const BasicTensor<T>& f, const BinaryMask& b,
                                            FeatureNormalization normalization = FeatureNormalization::total,
                                            int class_id = 0) {
  detail::require_rank(f, 3, "masked_spatial_average");
  const std::size_t d = f.dim(0), hw = f.dim(1) * f.dim(2);
  if (b.height != f.dim(1) || b.width != f.dim(2))
    throw DimensionError("masked_spatial_average: mask " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                         " vs features " + shape_str(f.shape()));
  const std::size_t count = b.count();
  std::vector<T> v(d, T(0));
  if (count == 0) return {class_id, BasicTensor<T>(Shape{d}, std::move(v)), 0};
  const double denom = normalization == FeatureNormalization::total ? static_cast<double>(hw) : static_cast<double>(count);
  for (std::size_t ch = 0; ch < d; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p)
      if (b.bits[p]) acc += static_cast<double>(f[ch * hw + p]);
    v[ch] = static_cast<T>(acc / denom);
  }
  auto out = detail::finish(Shape{d}, std::move(v), "masked_spatial_average");
  record_op(out, {&f}, [f, bits = b.bits, d, hw, denom](std::span<const T> g) mutable {
    auto& gf = f.grad_buffer();
    for (std::size_t ch = 0; ch < d; ++ch) {
      const T s = static_cast<T>(static_cast<double>(g[ch]) / denom);
      for (std::size_t p = 0; p < hw; ++p)
        if (bits[p]) gf[ch * hw + p] += s;
    }
  });
  return {class_id, std::move(out), count};
}

/// Per-class decayed average of pixel features. Stored values are plain
/// numbers; gradients only flow through the current iteration's feature.
template <typename T>
class FeatureMemoryBank {
 public:
  FeatureMemoryBank(std::size_t classes, T decay, bool blend_first_with_zeros = false)
      : decay_(decay), blend_first_with_zeros_(blend_first_with_zeros), stored_(classes), initialized_(classes, false) {
    if (!(decay >= T(0) && decay <= T(1))) throw ConfigError("memory bank decay must be in [0,1]");
  }

  T decay() const noexcept { return decay_; }
  std::size_t classes() const noexcept { return stored_.size(); }
  bool initialized(std::size_t c) const { return initialized_.at(c); }
  const std::vector<T>& stored(std::size_t c) const {
    if (!initialized_.at(c)) throw ContractError("memory bank: class " + std::to_string(c) + " read before first update");
    return stored_[c];
  }
  bool blend_first_with_zeros() const noexcept { return blend_first_with_zeros_; }

  /// Blends `incoming` into class `c` and returns the differentiable blend.
  BasicTensor<T> update(std::size_t c, const BasicTensor<T>& incoming) {
    if (c >= stored_.size()) throw ContractError("memory bank: class " + std::to_string(c) + " out of range");
    detail::check_finite(incoming, "bank_update");
    BasicTensor<T> blended;
    if (!initialized_[c] && !blend_first_with_zeros_) {
      blended = incoming;
    } else {
      std::vector<T> previous = initialized_[c] ? stored_[c] : std::vector<T>(incoming.numel(), T(0));
      if (previous.size() != incoming.numel()) throw DimensionError("memory bank: feature width changed");
      for (auto& x : previous) x *= decay_;
      blended = add(BasicTensor<T>(incoming.shape(), std::move(previous)), scale(incoming, T(1) - decay_));
    }
    stored_[c] = blended.values();
    initialized_[c] = true;
    return blended;
  }

  /// Restores a class entry (used when loading checkpoints).
  void restore(std::size_t c, std::vector<T> value) {
    stored_.at(c) = std::move(value);
    initialized_[c] = true;
  }

 private:
  T decay_;
  bool blend_first_with_zeros_;
  std::vector<std::vector<T>> stored_;
  std::vector<bool> initialized_;
};

template <typename T>
BasicTensor<T> bank_update(FeatureMemoryBank<T>& bank, std::size_t c, const BasicTensor<T>& f_c) {
  return bank.update(c, f_c);
}

template <typename T>
struct PresentFeature {
  int class_id;
  BasicTensor<T> feature;  // blended with the memory bank
  std::size_t pixel_count;
};

/// Pools features of every class with at least `min_pixels` pixels, runs the
/// bank update, and returns the blended features in ascending class order.
template <typename T>
std::vector<PresentFeature<T>> extract_present_features(const BasicTensor<T>& f, const IntMask& y_small,
                                                        FeatureMemoryBank<T>& bank, std::size_t min_pixels = 1,
                                                        FeatureNormalization normalization = FeatureNormalization::total,
                                                        std::int32_t ignore_index = kIgnoreIndex) {
  std::vector<PresentFeature<T>> out;
  std::vector<std::size_t> counts(bank.classes(), 0);
  for (auto label : y_small.labels) {
    if (label == ignore_index) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= bank.classes())
      throw LabelError("extract_present_features: label " + std::to_string(label) + " outside bank range");
    ++counts[static_cast<std::size_t>(label)];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0 || counts[c] < min_pixels) continue;
    auto pooled = masked_spatial_average(f, class_binary_mask(y_small, static_cast<std::int32_t>(c)), normalization,
                                         static_cast<int>(c));
    out.push_back({static_cast<int>(c), bank.update(c, pooled.vector), pooled.pixel_count});
  }
  return out;
}

}  // namespace copt
