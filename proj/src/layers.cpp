#include "graftnet/layers.hpp"

#include <cmath>

namespace graftnet {

template <Real T>
std::string ParamStore<T>::qualified(const std::string& name) const {
  std::string out;
  for (const auto& s : scopes_) out += s + ".";
  return out + name;
}

template <Real T>
Tensor<T> ParamStore<T>::add(const std::string& name, Tensor<T> tensor, bool trainable) {
  const std::string full = qualified(name);
  if (find(full) != nullptr) throw ConfigError("duplicate parameter name " + full);
  if (trainable) tensor.set_requires_grad(true);
  entries_.push_back({full, tensor, trainable, group_});
  return tensor;
}

template <Real T>
Tensor<T> ParamStore<T>::he_uniform(const std::string& name, const Shape& shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng_.uniform(-bound, bound));
  return add(name, Tensor<T>(shape, std::move(v)), true);
}

template <Real T>
Tensor<T> ParamStore<T>::constant(const std::string& name, const Shape& shape, T value) {
  return add(name, Tensor<T>(shape, value), true);
}

template <Real T>
void ParamStore<T>::add_buffer(const std::string& name, const Tensor<T>& tensor) {
  add(name, tensor, false);
}

template <Real T>
const ParamEntry<T>* ParamStore<T>::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <Real T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

template <Real T>
Conv<T>::Conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
              std::size_t stride_, bool with_bias)
    : stride(stride_), pad((kernel - 1) / 2) {
  ScopedName<T> scope(store, name);
  weight = store.he_uniform("weight", {out, in, kernel, kernel}, in * kernel * kernel);
  if (with_bias) bias = store.constant("bias", {out}, T{0});
}

template <Real T>
BatchNorm<T>::BatchNorm(ParamStore<T>& store, const std::string& name, std::size_t channels, T gamma_init)
    : state(channels) {
  ScopedName<T> scope(store, name);
  gamma = store.constant("gamma", {channels}, gamma_init);
  beta = store.constant("beta", {channels}, T{0});
  store.add_buffer("running_mean", state.running_mean);
  store.add_buffer("running_var", state.running_var);
}

template <Real T>
ConvBnRelu<T>::ConvBnRelu(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                          std::size_t kernel, std::size_t stride, bool activate_, T gamma_init)
    : activate(activate_) {
  ScopedName<T> scope(store, name);
  conv = Conv<T>(store, "conv", in, out, kernel, stride, false);
  bn = BatchNorm<T>(store, "bn", out, gamma_init);
}

template <Real T>
Tensor<T> ConvBnRelu<T>::operator()(const Tensor<T>& x, bool training) {
  auto y = bn(conv(x), training);
  return activate ? relu(y) : y;
}

template <Real T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out) {
  ScopedName<T> scope(store, name);
  weight = store.he_uniform("weight", {in, out}, in);
  bias = store.constant("bias", {out}, T{0});
}

template <Real T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return add(matmul(x, weight), bias);
}

template <Real T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t channels) {
  ScopedName<T> scope(store, name);
  gamma = store.constant("gamma", {channels}, T{1});
  beta = store.constant("beta", {channels}, T{0});
}

std::size_t scaled_channels(std::size_t nominal, double factor) {
  const auto c = static_cast<std::size_t>(std::ceil(static_cast<double>(nominal) * factor - 1e-9));
  return c < 4 ? 4 : c;
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Conv<float>;
template struct Conv<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct ConvBnRelu<float>;
template struct ConvBnRelu<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;

}  // namespace graftnet
