#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graftnet/ops.hpp"
#include "graftnet/rng.hpp"

namespace graftnet {

/// Learning-rate group of a parameter.
enum class ParamGroup { attn_backbone, other };

template <Real T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
  ParamGroup group = ParamGroup::other;
};

/// Owns the named parameters and buffers of a network.
///
/// Layers keep handles to the tensors they create here, so the store, the
/// optimizer and the checkpoint code all see the same storage.
template <Real T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  /// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
  Tensor<T> he_uniform(const std::string& name, const Shape& shape, std::size_t fan_in);
  Tensor<T> constant(const std::string& name, const Shape& shape, T value);
  /// Non-trainable state such as batch-norm running statistics.
  void add_buffer(const std::string& name, const Tensor<T>& tensor);

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  const ParamEntry<T>* find(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Scoped name prefix ("encoder.stage2.block0." ...).
  void push(const std::string& scope) { scopes_.push_back(scope); }
  void pop() { scopes_.pop_back(); }
  void set_group(ParamGroup group) { group_ = group; }

  SplitMix64& rng() { return rng_; }

 private:
  std::string qualified(const std::string& name) const;
  Tensor<T> add(const std::string& name, Tensor<T> tensor, bool trainable);

  std::vector<ParamEntry<T>> entries_;
  std::vector<std::string> scopes_;
  ParamGroup group_ = ParamGroup::other;
  SplitMix64 rng_;
};

template <Real T>
class ScopedName {
 public:
  ScopedName(ParamStore<T>& store, const std::string& scope) : store_(store) { store_.push(scope); }
  ~ScopedName() { store_.pop(); }
  ScopedName(const ScopedName&) = delete;
  ScopedName& operator=(const ScopedName&) = delete;

 private:
  ParamStore<T>& store_;
};

template <Real T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the conv feeds a batch norm
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv() = default;
  Conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
       std::size_t stride, bool with_bias);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

template <Real T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> state{1};

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, std::size_t channels, T gamma_init = T{1});
  Tensor<T> operator()(const Tensor<T>& x, bool training) { return batch_norm2d(x, gamma, beta, state, training); }
};

/// conv (no bias) -> batch norm -> optional ReLU.
template <Real T>
struct ConvBnRelu {
  Conv<T> conv;
  BatchNorm<T> bn;
  bool activate = true;

  ConvBnRelu() = default;
  ConvBnRelu(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
             std::size_t stride, bool activate = true, T gamma_init = T{1});
  Tensor<T> operator()(const Tensor<T>& x, bool training);
};

/// y = x W + b over the last axis; W is [in, out].
template <Real T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <Real T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Channel count scaled by a toy factor, never below 4.
std::size_t scaled_channels(std::size_t nominal, double factor);

}  // namespace graftnet
