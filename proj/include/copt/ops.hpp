#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "copt/tensor.hpp"

namespace copt {

namespace detail {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const BasicTensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

template <typename T>
BasicTensor<T> finish(Shape shape, std::vector<T> values, const char* op) {
  BasicTensor<T> out(std::move(shape), std::move(values));
  check_finite(out, op);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  auto out = detail::finish(a.shape(), std::move(v), "add");
  record_op(out, {&a, &b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  auto out = detail::finish(a.shape(), std::move(v), "sub");
  record_op(out, {&a, &b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  auto out = detail::finish(a.shape(), std::move(v), "mul");
  record_op(out, {&a, &b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return out;
}

/// Multiplies every element by a constant.
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * s;
  auto out = detail::finish(a.shape(), std::move(v), "scale");
  record_op(out, {&a}, [a, s](std::span<const T> g) mutable {
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
  return out;
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(a[i]);
  auto out = detail::finish(a.shape(), std::move(v), "abs");
  record_op(out, {&a}, [a](std::span<const T> g) mutable {
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += a[i] > T(0) ? g[i] : (a[i] < T(0) ? -g[i] : T(0));
  });
  return out;
}

/// max(0, x); the subgradient at 0 is 0.
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] > T(0) ? a[i] : T(0);
  auto out = detail::finish(a.shape(), std::move(v), "relu");
  record_op(out, {&a}, [a](std::span<const T> g) mutable {
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (a[i] > T(0)) ga[i] += g[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and structure
// ---------------------------------------------------------------------------

/// Sum of all elements, accumulated left to right in double.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (T x : a.data()) acc += static_cast<double>(x);
  auto out = detail::finish<T>(Shape{}, {static_cast<T>(acc)}, "sum");
  record_op(out, {&a}, [a](std::span<const T> g) mutable {
    auto& ga = a.grad_buffer();
    for (auto& x : ga) x += g[0];
  });
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (T x : a.data()) acc += static_cast<double>(x);
  const double n = static_cast<double>(a.numel());
  auto out = detail::finish<T>(Shape{}, {static_cast<T>(acc / n)}, "mean");
  record_op(out, {&a}, [a, n](std::span<const T> g) mutable {
    auto& ga = a.grad_buffer();
    const T share = static_cast<T>(static_cast<double>(g[0]) / n);
    for (auto& x : ga) x += share;
  });
  return out;
}

/// Copy with a new shape of equal element count.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto out = detail::finish(std::move(shape), a.values(), "reshape");
  record_op(out, {&a}, [a](std::span<const T> g) mutable {
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

/// Concatenates along the leading axis. Scalars count as shape [1].
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  auto trailing = [](const BasicTensor<T>& t) {
    if (t.rank() == 0) return Shape{};
    return Shape(t.shape().begin() + 1, t.shape().end());
  };
  const Shape tail = trailing(parts.front());
  std::size_t lead = 0;
  std::vector<T> v;
  for (const auto& p : parts) {
    if (trailing(p) != tail) throw DimensionError("concat: trailing shape mismatch " + shape_str(p.shape()));
    lead += p.rank() == 0 ? 1 : p.dim(0);
    v.insert(v.end(), p.data().begin(), p.data().end());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  auto out = detail::finish(std::move(shape), std::move(v), "concat");
  record_op_n(out, parts, [parts](std::span<const T> g) mutable {
    std::size_t offset = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) {
        auto& gp = p.grad_buffer();
        for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += g[offset + i];
      }
      offset += p.numel();
    }
  });
  return out;
}

/// Stop-gradient: same values, never recorded.
template <typename T>
BasicTensor<T> detach(const BasicTensor<T>& a) {
  return BasicTensor<T>(a.shape(), a.values());
}

// ---------------------------------------------------------------------------
// Vision ops
// ---------------------------------------------------------------------------

/// Cross-correlation of input [C_in,H,W] with kernel [C_out,C_in,k,k] plus bias.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding) {
  detail::require_rank(input, 3, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  detail::require_rank(bias, 1, "conv2d bias");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin || kernel.dim(3) != k)
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " does not fit input " + shape_str(input.shape()));
  if (bias.dim(0) != cout) throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) + " outputs");
  if (h + 2 * padding < k || w + 2 * padding < k)
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(input.shape()));
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;
  const std::size_t rows = cin * k * k, cols = ho * wo;

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;

  // im2col: row r = (ci, ky, kx), column c = (oy, ox)
  auto col = std::make_shared<Mat>(Mat::Zero(rows, cols));
  const T* x = input.data().data();
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col->data() + ((ci * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[oy * wo + ox] = src[ix];
          }
        }
      }

  std::vector<T> v(cout * cols);
  Eigen::Map<Mat> y(v.data(), cout, cols);
  y.noalias() = CMap(kernel.data().data(), cout, rows) * (*col);
  for (std::size_t co = 0; co < cout; ++co) y.row(co).array() += bias[co];
  auto out = detail::finish(Shape{cout, ho, wo}, std::move(v), "conv2d");

  record_op(out, {&input, &kernel, &bias},
            [input, kernel, bias, col, stride, padding, cin, h, w, cout, k, ho, wo, rows, cols](std::span<const T> g) mutable {
              CMap gy(g.data(), cout, cols);
              if (kernel.requires_grad()) {
                auto& gk = kernel.grad_buffer();
                Eigen::Map<Mat>(gk.data(), cout, rows).noalias() += gy * col->transpose();
              }
              if (bias.requires_grad()) {
                auto& gb = bias.grad_buffer();
                for (std::size_t co = 0; co < cout; ++co) {
                  T acc = T(0);
                  for (std::size_t c = 0; c < cols; ++c) acc += g[co * cols + c];
                  gb[co] += acc;
                }
              }
              if (input.requires_grad()) {
                Mat gcol = CMap(kernel.data().data(), cout, rows).transpose() * gy;
                auto& gx = input.grad_buffer();
                for (std::size_t ci = 0; ci < cin; ++ci)
                  for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                      const T* src = gcol.data() + ((ci * k + ky) * k + kx) * cols;
                      for (std::size_t oy = 0; oy < ho; ++oy) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        T* dst = gx.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                          const std::ptrdiff_t ix =
                              static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                          if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[oy * wo + ox];
                        }
                      }
                    }
              }
            });
  return out;
}

/// Replicates every cell of [C,h,w] into a factor x factor block.
template <typename T>
BasicTensor<T> nearest_upsample(const BasicTensor<T>& x, std::size_t factor) {
  detail::require_rank(x, 3, "nearest_upsample");
  if (factor == 0) throw DimensionError("nearest_upsample: factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t H = h * factor, W = w * factor;
  std::vector<T> v(c * H * W);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) v[(ch * H + i) * W + j] = x[(ch * h + i / factor) * w + j / factor];
  auto out = detail::finish(Shape{c, H, W}, std::move(v), "nearest_upsample");
  record_op(out, {&x}, [x, c, h, w, H, W, factor](std::span<const T> g) mutable {
    auto& gx = x.grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) gx[(ch * h + i / factor) * w + j / factor] += g[(ch * H + i) * W + j];
  });
  return out;
}

/// Softmax over the channel axis of [C,H,W].
template <typename T>
BasicTensor<T> softmax_channel(const BasicTensor<T>& logits) {
  detail::require_rank(logits, 3, "softmax_channel");
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  std::vector<T> v(logits.numel());
  for (std::size_t p = 0; p < hw; ++p) {
    T mx = logits[p];
    for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, logits[ch * hw + p]);
    double z = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) z += std::exp(static_cast<double>(logits[ch * hw + p] - mx));
    for (std::size_t ch = 0; ch < c; ++ch)
      v[ch * hw + p] = static_cast<T>(std::exp(static_cast<double>(logits[ch * hw + p] - mx)) / z);
  }
  auto out = detail::finish(logits.shape(), std::move(v), "softmax_channel");
  record_op(out, {&logits}, [logits, probs = out.values(), c, hw](std::span<const T> g) mutable {
    auto& gl = logits.grad_buffer();
    for (std::size_t p = 0; p < hw; ++p) {
      T dot = T(0);
      for (std::size_t ch = 0; ch < c; ++ch) dot += g[ch * hw + p] * probs[ch * hw + p];
      for (std::size_t ch = 0; ch < c; ++ch) gl[ch * hw + p] += probs[ch * hw + p] * (g[ch * hw + p] - dot);
    }
  });
  return out;
}

/// Channel argmax of [C,H,W]; ties resolve to the smallest channel.
template <typename T>
IntMask argmax_channel(const BasicTensor<T>& x) {
  detail::require_rank(x, 3, "argmax_channel");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  IntMask m(h, w);
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t ch = 1; ch < c; ++ch)
      if (x[ch * hw + p] > x[best * hw + p]) best = ch;
    m.labels[p] = static_cast<std::int32_t>(best);
  }
  return m;
}

/// Mean over non-ignored pixels of -log softmax(logits)[label].
/// Returns 0 when every pixel is ignored.
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, const IntMask& labels, std::int32_t ignore_index) {
  detail::require_rank(logits, 3, "softmax_cross_entropy");
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  if (labels.height != logits.dim(1) || labels.width != logits.dim(2))
    throw DimensionError("softmax_cross_entropy: labels " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " vs logits " + shape_str(logits.shape()));
  std::size_t counted = 0;
  double total = 0.0;
  // Per-pixel softmax kept for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  for (std::size_t p = 0; p < hw; ++p) {
    const std::int32_t y = labels.labels[p];
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw LabelError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(c) +
                       ") and not ignore_index " + std::to_string(ignore_index));
    double mx = logits[p];
    for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, static_cast<double>(logits[ch * hw + p]));
    double z = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) z += std::exp(static_cast<double>(logits[ch * hw + p]) - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - static_cast<double>(logits[static_cast<std::size_t>(y) * hw + p]);
    for (std::size_t ch = 0; ch < c; ++ch)
      (*probs)[ch * hw + p] = static_cast<T>(std::exp(static_cast<double>(logits[ch * hw + p]) - log_z));
    ++counted;
  }
  const double value = counted ? total / static_cast<double>(counted) : 0.0;
  auto out = detail::finish<T>(Shape{}, {static_cast<T>(value)}, "softmax_cross_entropy");
  if (counted == 0) return out;
  record_op(out, {&logits}, [logits, labels, probs, c, hw, ignore_index, counted](std::span<const T> g) mutable {
    auto& gl = logits.grad_buffer();
    const T s = static_cast<T>(static_cast<double>(g[0]) / static_cast<double>(counted));
    for (std::size_t p = 0; p < hw; ++p) {
      const std::int32_t y = labels.labels[p];
      if (y == ignore_index) continue;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T onehot = static_cast<std::size_t>(y) == ch ? T(1) : T(0);
        gl[ch * hw + p] += s * ((*probs)[ch * hw + p] - onehot);
      }
    }
  });
  return out;
}

/// a.b / (max(|a|,eps) * max(|b|,eps)) over flattened tensors of equal size.
template <typename T>
BasicTensor<T> cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b, T eps = T(1e-8)) {
  if (a.numel() != b.numel() || a.numel() == 0)
    throw DimensionError("cosine_similarity: sizes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double da = std::max(na, static_cast<double>(eps)), db = std::max(nb, static_cast<double>(eps));
  const double cos = ab / (da * db);
  auto out = detail::finish<T>(Shape{}, {static_cast<T>(cos)}, "cosine_similarity");
  record_op(out, {&a, &b}, [a, b, ab, na, nb, da, db](std::span<const T> g) mutable {
    const double go = g[0];
    // d/da: b/(da db) - ab * a / (da^3 db) when the norm is above eps.
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      const bool clamp = na < da;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(b[i]) / (da * db);
        if (!clamp) d -= ab * a[i] / (da * da * da * db);
        ga[i] += static_cast<T>(go * d);
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      const bool clamp = nb < db;
      for (std::size_t i = 0; i < b.numel(); ++i) {
        double d = static_cast<double>(a[i]) / (da * db);
        if (!clamp) d -= ab * b[i] / (da * db * db * db);
        gb[i] += static_cast<T>(go * d);
      }
    }
  });
  return out;
}

}  // namespace copt
