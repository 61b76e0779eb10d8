#pragma once

#include <algorithm>
#include <string>

#include "copt/model.hpp"
#include "copt/ops.hpp"
#include "copt/pixel_feat.hpp"
#include "copt/rng.hpp"

namespace copt {

/// Hard teacher labels plus the fraction of pixels whose max softmax exceeds
/// the confidence threshold.
struct PseudoLabel {
  IntMask labels;
  float quality = 0.0f;
};

/// Pseudo label from raw teacher logits [C,H,W].
template <typename T>
PseudoLabel pseudo_label_from_logits(const BasicTensor<T>& logits, float threshold) {
  NoGradGuard no_grad;
  const auto probs = softmax_channel(detach(logits));
  const std::size_t c = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
  PseudoLabel pl{argmax_channel(probs), 0.0f};
  std::size_t confident = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    T mx = probs[p];
    for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, probs[ch * hw + p]);
    if (static_cast<double>(mx) > static_cast<double>(threshold)) ++confident;
  }
  pl.quality = static_cast<float>(static_cast<double>(confident) / static_cast<double>(hw));
  return pl;
}

/// Teacher prediction on an unlabeled target image; never recorded.
template <typename T>
PseudoLabel pseudo_label(const SegModel<T>& teacher, const BasicTensor<T>& x_t, float threshold) {
  NoGradGuard no_grad;
  return pseudo_label_from_logits(forward(teacher, x_t).logits, threshold);
}

struct MaskSpec {
  std::size_t block_size = 32;
  float mask_ratio = 0.7f;
  float fill_value = 0.0f;
};

/// Splits the image into block_size x block_size tiles and replaces each tile
/// with `fill_value` with probability `mask_ratio`.
template <typename T>
BasicTensor<T> mask_image(const BasicTensor<T>& x, const MaskSpec& spec, CounterRng& rng) {
  detail::require_rank(x, 3, "mask_image");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), b = spec.block_size;
  if (b == 0 || h % b != 0 || w % b != 0)
    throw DimensionError("mask_image: block size " + std::to_string(b) + " does not divide " + std::to_string(h) + "x" +
                         std::to_string(w));
  BasicTensor<T> out = detach(x);
  for (std::size_t bi = 0; bi < h / b; ++bi)
    for (std::size_t bj = 0; bj < w / b; ++bj) {
      if (!rng.bernoulli(spec.mask_ratio)) continue;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = bi * b; i < (bi + 1) * b; ++i)
          for (std::size_t j = bj * b; j < (bj + 1) * b; ++j) out[(ch * h + i) * w + j] = static_cast<T>(spec.fill_value);
    }
  return out;
}

/// q * CE(student(masked image), pseudo labels).
template <typename T>
BasicTensor<T> masked_loss(const SegModel<T>& student, const BasicTensor<T>& x_t, const PseudoLabel& pl,
                           const MaskSpec& spec, CounterRng& rng) {
  const auto masked = mask_image(x_t, spec, rng);
  if (pl.quality == 0.0f) return BasicTensor<T>::scalar(T(0));
  const auto logits = forward(student, masked).logits;
  return scale(softmax_cross_entropy(logits, pl.labels, kIgnoreIndex), static_cast<T>(pl.quality));
}

struct AugmentSpec {
  double p_flip = 0.5;
  double p_jitter = 0.8;
  double p_blur = 0.5;
  double scale_lo = 0.6, scale_hi = 1.4;
  double shift_lo = -0.2, shift_hi = 0.2;
};

template <typename T>
struct Augmented {
  BasicTensor<T> image;
  bool flipped = false;
};

template <typename T>
BasicTensor<T> flip_horizontal(const BasicTensor<T>& x) {
  detail::require_rank(x, 3, "flip_horizontal");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  BasicTensor<T> out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out[(ch * h + i) * w + j] = x[(ch * h + i) * w + (w - 1 - j)];
  return out;
}

inline IntMask flip_horizontal(const IntMask& m) {
  IntMask out(m.height, m.width);
  for (std::size_t i = 0; i < m.height; ++i)
    for (std::size_t j = 0; j < m.width; ++j) out.at(i, j) = m.at(i, m.width - 1 - j);
  return out;
}

/// Random flip, per-channel affine color jitter and 3x3 box blur, each behind
/// its own coin, then clamped to [0,1]. Coins and parameters are always drawn
/// so the stream position does not depend on outcomes.
template <typename T>
Augmented<T> strong_augment(const BasicTensor<T>& x, CounterRng& rng, const AugmentSpec& spec = {}) {
  detail::require_rank(x, 3, "strong_augment");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const bool flip = rng.bernoulli(spec.p_flip);
  const bool jitter = rng.bernoulli(spec.p_jitter);
  std::vector<double> scales(c), shifts(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    scales[ch] = rng.uniform(spec.scale_lo, spec.scale_hi);
    shifts[ch] = rng.uniform(spec.shift_lo, spec.shift_hi);
  }
  const bool blur = rng.bernoulli(spec.p_blur);

  BasicTensor<T> img = flip ? flip_horizontal(x) : detach(x);
  if (jitter)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) {
        T& v = img[ch * h * w + p];
        v = static_cast<T>(scales[ch] * static_cast<double>(v) + shifts[ch]);
      }
  if (blur) {
    BasicTensor<T> blurred(img.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = 0.0;
          int n = 0;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const auto ii = static_cast<std::ptrdiff_t>(i) + di, jj = static_cast<std::ptrdiff_t>(j) + dj;
              if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) || jj >= static_cast<std::ptrdiff_t>(w))
                continue;
              acc += static_cast<double>(img[(ch * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)]);
              ++n;
            }
          blurred[(ch * h + i) * w + j] = static_cast<T>(acc / n);
        }
    img = blurred;
  }
  for (auto& v : img.data()) v = std::clamp(v, T(0), T(1));
  return {img, flip};
}

/// CE of the student on a strongly augmented target image against the
/// pseudo labels (flipped along with the image). Weighted by q unless
/// `quality_weight` is false.
template <typename T>
BasicTensor<T> strongaug_loss(const SegModel<T>& student, const BasicTensor<T>& x_t, const PseudoLabel& pl,
                              CounterRng& rng, const AugmentSpec& spec = {}, bool quality_weight = true) {
  const auto aug = strong_augment(x_t, rng, spec);
  const T weight = quality_weight ? static_cast<T>(pl.quality) : T(1);
  if (weight == T(0)) return BasicTensor<T>::scalar(T(0));
  const IntMask labels = aug.flipped ? flip_horizontal(pl.labels) : pl.labels;
  const auto logits = forward(student, aug.image).logits;
  return scale(softmax_cross_entropy(logits, labels, kIgnoreIndex), weight);
}

}  // namespace copt
