#pragma once

#include <cmath>
#include <vector>

#include "graftnet/rng.hpp"
#include "graftnet/tensor.hpp"

namespace graftnet::testing {

template <Real T>
Tensor<T> random_tensor(const Shape& shape, SplitMix64& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(shape, std::move(v));
}

template <Real T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace graftnet::testing
