#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "copt/errors.hpp"

namespace copt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Integer label map [H, W], row-major. Used for ground truth, pseudo labels
/// and predictions alike.
struct IntMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;

  IntMask() = default;
  IntMask(std::size_t h, std::size_t w, std::int32_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
  IntMask(std::size_t h, std::size_t w, std::vector<std::int32_t> values)
      : height(h), width(w), labels(std::move(values)) {
    if (labels.size() != h * w) throw DimensionError("IntMask: value count does not match " + std::to_string(h) + "x" + std::to_string(w));
  }

  std::int32_t& at(std::size_t i, std::size_t j) { return labels[i * width + j]; }
  std::int32_t at(std::size_t i, std::size_t j) const { return labels[i * width + j]; }
  std::size_t size() const { return labels.size(); }

  friend bool operator==(const IntMask&, const IntMask&) = default;
};

class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape that recorded the op producing this tensor
};

inline thread_local Tape* active_tape = nullptr;

}  // namespace detail

template <typename T>
class BasicTensor;

/// Ordered record of differentiable operations on one thread.
///
/// Ops append a record when at least one input requires a gradient and a tape
/// is active. `backward` replays the records once each, newest first.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const void* output, std::function<void()> backward_fn) {
    records_.push_back({output, std::move(backward_fn)});
  }

  std::size_t size() const noexcept { return records_.size(); }
  void clear() noexcept { records_.clear(); }

  /// Replays the recorded ops in reverse, then drops them.
  template <typename T>
  void backward(const BasicTensor<T>& loss);

 private:
  struct Record {
    const void* output;
    std::function<void()> backward_fn;
  };
  std::vector<Record> records_;
};

/// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept : previous_(detail::active_tape) { detail::active_tape = &tape; }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the calling thread.
class NoGradGuard {
 public:
  NoGradGuard() noexcept : previous_(detail::active_tape) { detail::active_tape = nullptr; }
  ~NoGradGuard() { detail::active_tape = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

inline Tape* active_tape() noexcept { return detail::active_tape; }

/// Dense row-major tensor handle.
///
/// Copies share storage (like a framework tensor handle) so parameters can be
/// referenced from the tape and the optimizer at once; use `clone` for a deep
/// copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : impl_(std::make_shared<detail::TensorImpl<T>>()) {}

  explicit BasicTensor(Shape shape, T fill = T(0)) : BasicTensor() {
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> values) : BasicTensor() {
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw DimensionError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T(0)); }
  static BasicTensor full(Shape shape, T v) { return BasicTensor(std::move(shape), v); }
  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }
  static BasicTensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor(Shape{n}, std::move(values));
  }

  const Shape& shape() const noexcept { return impl_->shape; }
  std::size_t rank() const noexcept { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const noexcept { return impl_->data.size(); }
  bool is_scalar() const noexcept { return impl_->data.size() == 1; }

  std::span<T> data() noexcept { return impl_->data; }
  std::span<const T> data() const noexcept { return impl_->data; }
  const std::vector<T>& values() const& noexcept { return impl_->data; }
  std::vector<T> values() && { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (!is_scalar()) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const noexcept { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const noexcept { return !impl_->grad.empty(); }
  std::span<const T> grad() const noexcept { return impl_->grad; }
  void zero_grad() noexcept { impl_->grad.clear(); }

  /// Gradient buffer, allocated (zeroed) on first access.
  std::vector<T>& grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  BasicTensor clone() const {
    BasicTensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  /// Same values at another precision, detached from any tape.
  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> v(impl_->data.begin(), impl_->data.end());
    return BasicTensor<U>(impl_->shape, std::move(v));
  }

  bool same_storage(const BasicTensor& other) const noexcept { return impl_ == other.impl_; }
  const void* id() const noexcept { return impl_.get(); }

  const Tape* producing_tape() const noexcept { return impl_->tape; }
  void set_producing_tape(const Tape* tape) noexcept { impl_->tape = tape; }

  bool all_finite() const noexcept {
    for (T v : impl_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
void Tape::backward(const BasicTensor<T>& loss) {
  if (!loss.is_scalar()) throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward() on a loss that does not require grad");
  std::size_t start = records_.size();
  if (loss.producing_tape() != nullptr) {
    if (loss.producing_tape() != this) throw ContractError("backward() on a loss recorded by another tape");
    start = 0;
    for (std::size_t i = records_.size(); i-- > 0;) {
      if (records_[i].output == loss.id()) {
        start = i + 1;
        break;
      }
    }
  }
  loss.grad_buffer()[0] += T(1);
  for (std::size_t i = start; i-- > 0;) records_[i].backward_fn();
  records_.clear();
}

/// Backpropagates through the calling thread's active tape.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  Tape* tape = detail::active_tape;
  if (tape == nullptr) throw ContractError("backward() without an active tape");
  tape->backward(loss);
}

namespace detail {

template <typename T>
void check_finite(const BasicTensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
}

template <typename T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  for (auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

/// Registers `out` as produced by a differentiable op over `inputs`.
///
/// `fn(gout)` receives the accumulated output gradient and must add into the
/// grad buffers of inputs that require gradients. Nothing is recorded when no
/// tape is active or no input requires a gradient.
template <typename T, typename Fn>
void record_op(BasicTensor<T>& out, std::initializer_list<const BasicTensor<T>*> inputs, Fn&& fn) {
  Tape* tape = detail::active_tape;
  if (tape == nullptr || !detail::any_requires_grad<T>(inputs)) return;
  out.set_requires_grad(true);
  out.set_producing_tape(tape);
  tape->record(out.id(), [out, f = std::forward<Fn>(fn)]() mutable {
    if (!out.has_grad()) return;
    f(out.grad());
  });
}

template <typename T, typename Fn>
void record_op_n(BasicTensor<T>& out, const std::vector<BasicTensor<T>>& inputs, Fn&& fn) {
  Tape* tape = detail::active_tape;
  if (tape == nullptr) return;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return;
  out.set_requires_grad(true);
  out.set_producing_tape(tape);
  tape->record(out.id(), [out, f = std::forward<Fn>(fn)]() mutable {
    if (!out.has_grad()) return;
    f(out.grad());
  });
}

}  // namespace copt
