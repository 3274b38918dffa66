#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "graftnet/tensor.hpp"

namespace graftnet {

struct GradCheckOptions {
  double step = 1e-5;
  /// Per input tensor; 0 checks every element, otherwise a seeded sample.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

struct NamedInput {
  std::string name;
  Tensor<double> tensor;
};

/// Central-difference check of every requested input of a scalar function.
///
/// `f` is evaluated once on a tape for the analytic gradient, then twice per
/// checked element without a tape. The error of an element is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const std::vector<NamedInput>& inputs,
                           const GradCheckOptions& options = {});

/// Single-input form: returns the max relative error over all elements of x.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double step = 1e-5);

}  // namespace graftnet
