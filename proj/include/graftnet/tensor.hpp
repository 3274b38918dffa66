#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "graftnet/error.hpp"

namespace graftnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

template <Real T>
constexpr DType dtype_of() {
  return std::same_as<T, float> ? DType::f32 : DType::f64;
}

namespace detail {

template <Real T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor with shared (handle) semantics.
///
/// Copies of a Tensor refer to the same storage, the way a graph node is shared
/// between the ops that consume it. Use clone() for a deep copy. The gradient
/// buffer exists iff requires_grad() is true and always has the data's shape.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> values() const { return impl_->data; }
  std::span<T> mutable_values() { return impl_->data; }
  const T* data() const { return impl_->data.data(); }
  T* mutable_data() { return impl_->data.data(); }

  /// Value of a single-element tensor.
  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  /// Turns gradient tracking on or off; turning it on allocates a zeroed grad.
  Tensor& set_requires_grad(bool on);
  std::span<const T> grad() const { return impl_->grad; }
  /// Gradient accumulation is allowed through const handles.
  std::span<T> mutable_grad() const { return impl_->grad; }
  void zero_grad();

  /// Deep copy of the values, detached from any tape and without gradient.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  template <Real U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return Tensor<U>(impl_->shape, std::move(out));
  }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Ordered record of executed differentiable ops.
///
/// Ops append a closure that propagates their output gradient into their
/// operands. backward() runs the closures in exact reverse execution order,
/// which is a valid reverse topological order because operands always exist
/// before the op that consumes them.
template <Real T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { entries_.push_back(std::move(fn)); }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Fails on a non-scalar loss, an
  /// empty tape, or a second call without reset().
  void backward(const Tensor<T>& loss);

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<BackwardFn> entries_;
  bool consumed_ = false;
};

template <Real T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

template <Real T>
Tape<T>* active_tape() {
  return active_tape_slot<T>();
}

/// Makes `tape` the recording target of the current thread for the scope.
/// Passing nullptr disables recording (inference mode).
template <Real T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>* tape) : previous_(active_tape_slot<T>()) { active_tape_slot<T>() = tape; }
  explicit TapeScope(Tape<T>& tape) : TapeScope(&tape) {}
  ~TapeScope() { active_tape_slot<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace graftnet
