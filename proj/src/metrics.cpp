#include "graftnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "graftnet/error.hpp"
#include "graftnet/ops.hpp"

namespace graftnet {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_pair(const GrayMap& p, const GrayMap& g, const char* who) {
  if (p.height != g.height || p.width != g.width || p.size() == 0) {
    throw DimensionError(std::string(who) + ": maps differ in size (" + std::to_string(p.height) + "x" +
                         std::to_string(p.width) + " vs " + std::to_string(g.height) + "x" +
                         std::to_string(g.width) + ")");
  }
  for (double v : p.values) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(who) + ": prediction values must lie in [0,1]");
  }
}

std::vector<bool> binarize(const GrayMap& m, double threshold) {
  std::vector<bool> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m.values[i] >= threshold;
  return out;
}

// Mean-similarity of a foreground (or background) region.
double s_object(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= double(x.size());
  double var = 0.0;
  if (x.size() > 1) {
    for (double v : x) var += (v - mean) * (v - mean);
    var /= double(x.size() - 1);
  }
  return 2.0 * mean / (mean * mean + 1.0 + std::sqrt(var) + kEps);
}

double ssim(const GrayMap& p, const std::vector<bool>& g, std::size_t y0, std::size_t y1, std::size_t x0,
            std::size_t x1) {
  const std::size_t n = (y1 - y0) * (x1 - x0);
  double mx = 0, my = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      mx += p.at(y, x);
      my += g[y * p.width + x] ? 1.0 : 0.0;
    }
  mx /= double(n);
  my /= double(n);
  double sx = 0, sy = 0, sxy = 0;
  if (n > 1) {
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) {
        const double dx = p.at(y, x) - mx, dy = (g[y * p.width + x] ? 1.0 : 0.0) - my;
        sx += dx * dx;
        sy += dy * dy;
        sxy += dx * dy;
      }
    sx /= double(n - 1);
    sy /= double(n - 1);
    sxy /= double(n - 1);
  }
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sx + sy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

double s_region(const GrayMap& p, const std::vector<bool>& g) {
  const std::size_t h = p.height, w = p.width;
  double sy = 0, sx = 0, count = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (g[y * w + x]) {
        sy += double(y);
        sx += double(x);
        count += 1;
      }
  // Centroid rounded half-to-even, then shifted by one, as in the reference code.
  std::size_t cx, cy;
  if (count == 0) {
    cx = std::size_t(std::nearbyint(double(w) / 2)) + 1;
    cy = std::size_t(std::nearbyint(double(h) / 2)) + 1;
  } else {
    cx = std::size_t(std::nearbyint(sx / count)) + 1;
    cy = std::size_t(std::nearbyint(sy / count)) + 1;
  }
  cx = std::min(cx, w);
  cy = std::min(cy, h);
  const double area = double(h * w);
  const double w1 = double(cx * cy) / area;
  const double w2 = double(cy * (w - cx)) / area;
  const double w3 = double((h - cy) * cx) / area;
  const double w4 = double((h - cy) * (w - cx)) / area;
  double score = 0.0;
  if (w1 > 0) score += w1 * ssim(p, g, 0, cy, 0, cx);
  if (w2 > 0) score += w2 * ssim(p, g, 0, cy, cx, w);
  if (w3 > 0) score += w3 * ssim(p, g, cy, h, 0, cx);
  if (w4 > 0) score += w4 * ssim(p, g, cy, h, cx, w);
  return score;
}

double nearest_mean(const std::vector<std::array<std::size_t, 2>>& from,
                    const std::vector<std::array<std::size_t, 2>>& to) {
  double total = 0.0;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double dy = double(a[0]) - double(b[0]), dx = double(a[1]) - double(b[1]);
      best = std::min(best, dy * dy + dx * dx);
    }
    total += std::sqrt(best);
  }
  return total / double(from.size());
}

}  // namespace

GrayMap::GrayMap(std::size_t h, std::size_t w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
  if (values.size() != h * w) {
    throw DimensionError("GrayMap: " + std::to_string(values.size()) + " values for " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
}

template <Real T>
GrayMap to_gray_map(const Tensor<T>& batch, std::size_t index) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || index >= batch.dim(0)) {
    throw DimensionError("to_gray_map: expected [N,1,H,W] with index < N, got " + shape_str(batch.shape()));
  }
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  const T* src = batch.data() + index * h * w;
  return GrayMap(h, w, std::vector<double>(src, src + h * w));
}

GrayMap resize_map(const GrayMap& m, std::size_t height, std::size_t width) {
  if (m.height == height && m.width == width) return m;
  TapeScope<double> no_tape(nullptr);
  auto out = bilinear_resize(Tensor<double>(Shape{1, 1, m.height, m.width}, m.values), height, width);
  return GrayMap(height, width, std::vector<double>(out.values().begin(), out.values().end()));
}

double mae(const GrayMap& p, const GrayMap& g) {
  check_pair(p, g, "mae");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p.values[i] - g.values[i]);
  return total / double(p.size());
}

FMeasure f_measure_curve(const GrayMap& p, const GrayMap& g) {
  check_pair(p, g, "f_measure_curve");
  const auto gt = binarize(g, 0.5);
  const std::size_t positives = std::count(gt.begin(), gt.end(), true);
  FMeasure out;
  if (positives == 0) {
    out.degenerate = true;
    return out;
  }
  // Histogram of quantised prediction levels split by ground truth, then
  // cumulative counts from the top: O(HW + 255).
  std::array<std::size_t, kFThresholds + 1> fg{}, bg{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto level = std::size_t(std::floor(p.values[i] * double(kFThresholds)));
    (gt[i] ? fg : bg)[std::min(level, kFThresholds)]++;
  }
  std::size_t tp = 0, fp = 0;
  for (std::size_t t = kFThresholds; t >= 1; --t) {
    tp += fg[t];
    fp += bg[t];
    const double precision = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
    const double recall = double(tp) / double(positives);
    const double denom = kFBeta2 * precision + recall;
    out.curve[t - 1] = denom == 0.0 ? 0.0 : (1.0 + kFBeta2) * precision * recall / denom;
  }
  out.f_max = *std::max_element(out.curve.begin(), out.curve.end());
  return out;
}

double s_measure(const GrayMap& p, const GrayMap& g) {
  check_pair(p, g, "s_measure");
  const auto gt = binarize(g, 0.5);
  const double n = double(p.size());
  const double y = double(std::count(gt.begin(), gt.end(), true)) / n;
  double mean_p = 0.0;
  for (double v : p.values) mean_p += v;
  mean_p /= n;
  if (y == 0.0) return 1.0 - mean_p;
  if (y == 1.0) return mean_p;
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (gt[i])
      fg.push_back(p.values[i]);
    else
      bg.push_back(1.0 - p.values[i]);
  }
  const double object = y * s_object(fg) + (1.0 - y) * s_object(bg);
  const double region = s_region(p, gt);
  return std::max(0.0, 0.5 * object + 0.5 * region);
}

double e_measure(const GrayMap& p, const GrayMap& g) {
  check_pair(p, g, "e_measure");
  const auto gt = binarize(g, 0.5);
  const double n = double(p.size());
  double mean_p = 0.0;
  for (double v : p.values) mean_p += v;
  mean_p /= n;
  const auto bin = binarize(p, std::min(2.0 * mean_p, 1.0));
  const double fg_gt = double(std::count(gt.begin(), gt.end(), true));
  const double fg_p = double(std::count(bin.begin(), bin.end(), true));
  if (fg_gt == 0.0) return 1.0 - fg_p / n;
  if (fg_gt == n) return fg_p / n;
  const double mg = fg_gt / n, mp = fg_p / n;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = (gt[i] ? 1.0 : 0.0) - mg;
    const double b = (bin[i] ? 1.0 : 0.0) - mp;
    const double align = 2.0 * a * b / (a * a + b * b + kEps);
    total += (align + 1.0) * (align + 1.0) / 4.0;
  }
  return total / n;
}

std::vector<std::array<std::size_t, 2>> boundary_pixels(const GrayMap& binary) {
  std::vector<std::array<std::size_t, 2>> out;
  const std::size_t h = binary.height, w = binary.width;
  auto fg = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < long(h) && x < long(w) && binary.at(std::size_t(y), std::size_t(x)) >= 0.5;
  };
  for (long y = 0; y < long(h); ++y)
    for (long x = 0; x < long(w); ++x) {
      if (!fg(y, x)) continue;
      if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) out.push_back({std::size_t(y), std::size_t(x)});
    }
  return out;
}

BdeResult bde(const GrayMap& p, const GrayMap& g, double threshold) {
  check_pair(p, g, "bde");
  GrayMap pb(p.height, p.width), gb(g.height, g.width);
  for (std::size_t i = 0; i < p.size(); ++i) {
    pb.values[i] = p.values[i] >= threshold ? 1.0 : 0.0;
    gb.values[i] = g.values[i] >= threshold ? 1.0 : 0.0;
  }
  const auto bp = boundary_pixels(pb), bg = boundary_pixels(gb);
  if (bp.empty() || bg.empty()) {
    return {std::hypot(double(p.height), double(p.width)), true};
  }
  return {0.5 * (nearest_mean(bp, bg) + nearest_mean(bg, bp)), false};
}

EvalResult evaluate(const GrayMap& p, const GrayMap& g) {
  const GrayMap pr = resize_map(p, g.height, g.width);
  EvalResult r;
  r.mae = mae(pr, g);
  const auto f = f_measure_curve(pr, g);
  r.f_curve = f.curve;
  r.f_max = f.f_max;
  r.f_degenerate = f.degenerate;
  r.s_measure = s_measure(pr, g);
  r.e_measure = e_measure(pr, g);
  const auto b = bde(pr, g);
  r.bde = b.value;
  r.bde_degenerate = b.degenerate;
  return r;
}

EvalResult aggregate(const std::vector<EvalResult>& results) {
  EvalResult out;
  if (results.empty()) return out;
  const double n = double(results.size());
  for (const auto& r : results) {
    out.mae += r.mae / n;
    out.s_measure += r.s_measure / n;
    out.e_measure += r.e_measure / n;
    out.bde += r.bde / n;
    for (std::size_t t = 0; t < kFThresholds; ++t) out.f_curve[t] += r.f_curve[t] / n;
    out.f_degenerate = out.f_degenerate || r.f_degenerate;
    out.bde_degenerate = out.bde_degenerate || r.bde_degenerate;
  }
  out.f_max = *std::max_element(out.f_curve.begin(), out.f_curve.end());
  return out;
}

template GrayMap to_gray_map(const Tensor<float>&, std::size_t);
template GrayMap to_gray_map(const Tensor<double>&, std::size_t);

}  // namespace graftnet
