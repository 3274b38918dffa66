#include "graftnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace graftnet {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <Real T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <Real T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("element count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  impl_->data = std::move(values);
  impl_->shape = std::move(shape);
}

template <Real T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

template <Real T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

template <Real T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->data.size(), T{0});
  } else {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
  return *this;
}

template <Real T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <Real T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

template <Real T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (consumed_) throw StateError("backward called twice without reset");
  if (entries_.empty()) throw StateError("backward on an empty tape");
  if (!loss.requires_grad()) throw StateError("loss was not produced by a recorded op");
  consumed_ = true;
  loss.mutable_grad()[0] += T{1};
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace graftnet
