#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "graftnet/tensor.hpp"

namespace graftnet {

/// Single-channel map in row-major order.
struct GrayMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  GrayMap() = default;
  GrayMap(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
  GrayMap(std::size_t h, std::size_t w, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
};

/// Map `index` of a [N,1,H,W] tensor.
template <Real T>
GrayMap to_gray_map(const Tensor<T>& batch, std::size_t index);

/// Bilinear resize (align_corners = false).
GrayMap resize_map(const GrayMap& m, std::size_t height, std::size_t width);

inline constexpr std::size_t kFThresholds = 255;
inline constexpr double kFBeta2 = 0.3;

double mae(const GrayMap& p, const GrayMap& g);

struct FMeasure {
  std::array<double, kFThresholds> curve{};  // entry t-1 binarises at P >= t/255
  double f_max = 0.0;
  bool degenerate = false;  // empty ground truth; f_max is 0
};

FMeasure f_measure_curve(const GrayMap& p, const GrayMap& g);

/// Structure measure with alpha = 0.5. G is binarised at 0.5.
double s_measure(const GrayMap& p, const GrayMap& g);

/// Enhanced alignment measure with the adaptive threshold min(2 mean(P), 1).
double e_measure(const GrayMap& p, const GrayMap& g);

struct BdeResult {
  double value = 0.0;       // pixels
  bool degenerate = false;  // a boundary was empty; value is the image diagonal
};

/// Symmetric mean boundary displacement between P (binarised at `threshold`) and G.
BdeResult bde(const GrayMap& p, const GrayMap& g, double threshold = 0.5);

/// Foreground pixels with a background or out-of-frame 4-neighbour, as (y, x).
std::vector<std::array<std::size_t, 2>> boundary_pixels(const GrayMap& binary);

struct EvalResult {
  double mae = 0.0;
  double f_max = 0.0;
  std::array<double, kFThresholds> f_curve{};
  double s_measure = 0.0;
  double e_measure = 0.0;
  double bde = 0.0;
  bool f_degenerate = false;
  bool bde_degenerate = false;
};

/// Resizes P to G's size, then computes every metric.
EvalResult evaluate(const GrayMap& p, const GrayMap& g);

/// Per-metric means; f_max is the maximum of the mean F curve.
EvalResult aggregate(const std::vector<EvalResult>& results);

}  // namespace graftnet
