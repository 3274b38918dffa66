#include "graftnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graftnet/rng.hpp"

namespace graftnet {

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  TapeScope<double> no_tape(nullptr);
  const Tensor<double> y = f();
  if (y.numel() != 1) throw DimensionError("grad_check: function output must be scalar, got " + shape_str(y.shape()));
  return y.item();
}

std::vector<std::size_t> pick_elements(std::size_t n, std::size_t limit, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const std::vector<NamedInput>& inputs,
                           const GradCheckOptions& options) {
  std::vector<bool> had_grad;
  for (const auto& in : inputs) {
    had_grad.push_back(in.tensor.requires_grad());
    Tensor<double> t = in.tensor;
    t.set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Tensor<double> y = f();
    if (y.numel() != 1) {
      throw DimensionError("grad_check: function output must be scalar, got " + shape_str(y.shape()));
    }
    tape.backward(y);
    for (const auto& in : inputs) analytic.emplace_back(in.tensor.grad().begin(), in.tensor.grad().end());
  }

  GradCheckReport report;
  SplitMix64 rng(options.seed);
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> t = inputs[k].tensor;
    for (std::size_t i : pick_elements(t.numel(), options.max_elements, rng)) {
      double& v = t.mutable_values()[i];
      const double saved = v;
      const double up = saved + h;
      const double down = saved - h;
      v = up;
      const double plus = evaluate(f);
      v = down;
      const double minus = evaluate(f);
      v = saved;
      // Divide by the represented step, not 2h.
      const double numeric = (plus - minus) / (up - down);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.checked;
      if (report.worst_input.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = inputs[k].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> t = inputs[k].tensor;
    t.set_requires_grad(had_grad[k]);
  }
  return report;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check([&] { return f(x); }, {{"x", x}}, options).max_rel_error;
}

}  // namespace graftnet
