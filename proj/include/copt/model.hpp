#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "copt/ops.hpp"
#include "copt/rng.hpp"

namespace copt {

struct ModelConfig {
  std::size_t classes = 5;
  std::size_t feature_dim = 32;             // D, width of the encoder output
  std::size_t downsample = 4;               // r
  std::vector<std::size_t> channels{16, 32};  // hidden encoder widths before the D-wide block
  std::size_t kernel = 3;

  void validate() const {
    if (downsample != 2 && downsample != 4 && downsample != 8)
      throw ConfigError("downsample factor must be 2, 4 or 8, got " + std::to_string(downsample));
    if (feature_dim < 4) throw ConfigError("feature_dim must be at least 4");
    if (classes < 2) throw ConfigError("need at least 2 classes");
    if (channels.size() != 2) throw ConfigError("channel schedule must list exactly 2 hidden widths");
    if (kernel % 2 == 0) throw ConfigError("kernel size must be odd");
  }

  /// Encoder strides; their product is the downsample factor.
  std::vector<std::size_t> strides() const {
    switch (downsample) {
      case 2: return {2, 1, 1};
      case 4: return {2, 2, 1};
      default: return {2, 2, 2};
    }
  }
};

template <typename T>
struct ConvLayer {
  BasicTensor<T> weight;  // [out, in, k, k]
  BasicTensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Encoder (three conv+ReLU blocks) followed by a 1x1 conv decoder whose
/// logits are upsampled back to the input resolution.
template <typename T>
struct SegModel {
  ModelConfig config;
  std::vector<ConvLayer<T>> encoder;
  ConvLayer<T> decoder;

  std::vector<BasicTensor<T>> parameters() const {
    std::vector<BasicTensor<T>> ps;
    for (const auto& l : encoder) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    ps.push_back(decoder.weight);
    ps.push_back(decoder.bias);
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto p : parameters()) p.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto p : parameters()) p.zero_grad();
  }
};

/// Closed-form parameter count for a configuration.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t k2 = cfg.kernel * cfg.kernel;
  const std::size_t widths[] = {3, cfg.channels[0], cfg.channels[1], cfg.feature_dim};
  std::size_t n = 0;
  for (int i = 0; i < 3; ++i) n += widths[i + 1] * widths[i] * k2 + widths[i + 1];
  return n + cfg.classes * cfg.feature_dim + cfg.classes;
}

namespace detail {

template <typename T>
ConvLayer<T> kaiming_layer(std::uint64_t seed, std::uint64_t layer, std::size_t out, std::size_t in, std::size_t k,
                           std::size_t stride, std::size_t padding) {
  CounterRng rng = CounterRng::stream(seed, layer, "init");
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  std::vector<T> w(out * in * k * k);
  for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
  ConvLayer<T> l;
  l.weight = BasicTensor<T>(Shape{out, in, k, k}, std::move(w));
  l.bias = BasicTensor<T>::zeros(Shape{out});
  l.stride = stride;
  l.padding = padding;
  return l;
}

}  // namespace detail

/// Kaiming-uniform weights (bound sqrt(6 / fan_in)) and zero biases, keyed by
/// (seed, layer index).
template <typename T = float>
SegModel<T> init_model(std::uint64_t seed, const ModelConfig& cfg) {
  cfg.validate();
  SegModel<T> m;
  m.config = cfg;
  const auto strides = cfg.strides();
  const std::size_t widths[] = {3, cfg.channels[0], cfg.channels[1], cfg.feature_dim};
  for (std::size_t i = 0; i < 3; ++i)
    m.encoder.push_back(
        detail::kaiming_layer<T>(seed, i, widths[i + 1], widths[i], cfg.kernel, strides[i], cfg.kernel / 2));
  m.decoder = detail::kaiming_layer<T>(seed, 3, cfg.classes, cfg.feature_dim, 1, 1, 0);
  m.set_requires_grad(true);
  return m;
}

template <typename T>
struct ForwardResult {
  BasicTensor<T> features;  // [D, H/r, W/r]
  BasicTensor<T> logits;    // [C, H, W]
};

template <typename T>
ForwardResult<T> forward(const SegModel<T>& model, const BasicTensor<T>& x) {
  detail::require_rank(x, 3, "forward");
  const std::size_t r = model.config.downsample;
  if (x.dim(1) % r != 0 || x.dim(2) % r != 0)
    throw DimensionError("forward: downsample factor " + std::to_string(r) + " does not divide input " +
                         shape_str(x.shape()));
  BasicTensor<T> h = x;
  for (const auto& l : model.encoder) h = relu(conv2d(h, l.weight, l.bias, l.stride, l.padding));
  auto low = conv2d(h, model.decoder.weight, model.decoder.bias, 1, 0);
  return {h, nearest_upsample(low, r)};
}

/// Deep copy with gradients cleared.
template <typename T>
SegModel<T> clone_params(const SegModel<T>& model) {
  SegModel<T> c;
  c.config = model.config;
  auto copy = [](const ConvLayer<T>& l) {
    ConvLayer<T> o = l;
    o.weight = l.weight.clone();
    o.bias = l.bias.clone();
    o.weight.zero_grad();
    o.bias.zero_grad();
    return o;
  };
  for (const auto& l : model.encoder) c.encoder.push_back(copy(l));
  c.decoder = copy(model.decoder);
  return c;
}

/// teacher <- alpha * teacher + (1 - alpha) * student, parameter-wise.
template <typename T>
void ema_update(SegModel<T>& teacher, const SegModel<T>& student, T alpha) {
  auto tp = teacher.parameters();
  auto sp = student.parameters();
  if (tp.size() != sp.size()) throw ContractError("ema_update: architectures differ");
  for (std::size_t i = 0; i < tp.size(); ++i)
    if (tp[i].shape() != sp[i].shape())
      throw ContractError("ema_update: parameter " + std::to_string(i) + " shape " + shape_str(tp[i].shape()) + " vs " +
                          shape_str(sp[i].shape()));
  const T beta = T(1) - alpha;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto dst = tp[i].data();
    auto src = sp[i].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = alpha * dst[k] + beta * src[k];
  }
}

}  // namespace copt
