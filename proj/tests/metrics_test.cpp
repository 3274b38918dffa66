#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "graftnet/metrics.hpp"
#include "graftnet/rng.hpp"

using namespace graftnet;

namespace {

GrayMap mod_pred(std::size_t h, std::size_t w, std::size_t a, std::size_t b) {
  GrayMap m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) m.values[i] = double((i * a + b) % 101) / 100.0;
  return m;
}

GrayMap mod_gt(std::size_t h, std::size_t w, std::size_t m, std::size_t k) {
  GrayMap g(h, w);
  for (std::size_t i = 0; i < h * w; ++i) g.values[i] = (i * m + k) % 7 < 3 ? 1.0 : 0.0;
  return g;
}

GrayMap disc(std::size_t h, std::size_t w, double cy, double cx, double r) {
  GrayMap g(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      g.at(y, x) = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r ? 1.0 : 0.0;
  return g;
}

GrayMap square(std::size_t side, std::size_t y0, std::size_t x0, std::size_t size) {
  GrayMap g(side, side);
  for (std::size_t y = y0; y < y0 + size; ++y)
    for (std::size_t x = x0; x < x0 + size; ++x) g.at(y, x) = 1.0;
  return g;
}

GrayMap random_map(std::size_t h, std::size_t w, SplitMix64& rng) {
  GrayMap m(h, w);
  for (auto& v : m.values) v = rng.uniform();
  return m;
}

GrayMap random_mask(std::size_t h, std::size_t w, SplitMix64& rng, double p = 0.4) {
  GrayMap m(h, w);
  for (auto& v : m.values) v = rng.coin(p) ? 1.0 : 0.0;
  return m;
}

GrayMap transposed(const GrayMap& m) {
  GrayMap t(m.width, m.height);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) t.at(x, y) = m.at(y, x);
  return t;
}

// F-measure at one threshold from an explicit confusion matrix.
double f_oracle(const GrayMap& p, const GrayMap& g, int t) {
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pred = p.values[i] * 255.0 >= t;
    const bool gt = g.values[i] > 0.5;
    tp += pred && gt;
    fp += pred && !gt;
    fn += !pred && gt;
  }
  const double prec = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  const double rec = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  return prec + rec > 0 ? 1.3 * prec * rec / (0.3 * prec + rec) : 0.0;
}

// Enhanced alignment via the four (pred, gt) combinations.
double e_oracle(const GrayMap& p, const GrayMap& g) {
  double mean = 0;
  for (double v : p.values) mean += v;
  mean /= double(p.size());
  const double thr = std::min(2 * mean, 1.0);
  double n[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < p.size(); ++i) n[p.values[i] >= thr][g.values[i] > 0.5] += 1;
  const double total = double(p.size());
  const double gfg = n[0][1] + n[1][1], pfg = n[1][0] + n[1][1];
  if (gfg == 0) return (total - pfg) / total;
  if (gfg == total) return pfg / total;
  double sum = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const double dp = a - pfg / total, dg = b - gfg / total;
      const double align = 2 * dp * dg / (dp * dp + dg * dg + 2.220446049250313e-16);
      sum += n[a][b] * (align + 1) * (align + 1) / 4;
    }
  return sum / total;
}

double bde_oracle(const GrayMap& p, const GrayMap& g) {
  auto edges = [](const GrayMap& m) {
    std::vector<std::pair<int, int>> out;
    const int h = int(m.height), w = int(m.width);
    auto on = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && m.at(y, x) >= 0.5; };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1))) out.push_back({y, x});
    return out;
  };
  auto directed = [](const auto& a, const auto& b) {
    double s = 0;
    for (auto [y, x] : a) {
      double best = 1e18;
      for (auto [v, u] : b) best = std::min(best, std::hypot(double(y - v), double(x - u)));
      s += best;
    }
    return s / double(a.size());
  };
  const auto ep = edges(p), eg = edges(g);
  return 0.5 * (directed(ep, eg) + directed(eg, ep));
}

}  // namespace

TEST_CASE("mae") {
  GrayMap p(2, 2, {0.5, 0, 1, 1}), g(2, 2, {1, 0, 1, 0});
  CHECK(mae(p, g) == doctest::Approx(0.375));
  CHECK(mae(g, g) == 0.0);
  CHECK(mae(GrayMap(3, 3, 1.0), GrayMap(3, 3, 0.0)) == 1.0);
  SplitMix64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_map(5, 7, rng);
    auto b = random_mask(5, 7, rng);
    GrayMap ia = a, ib = b;
    for (auto& v : ia.values) v = 1 - v;
    for (auto& v : ib.values) v = 1 - v;
    CHECK(mae(a, b) == doctest::Approx(mae(ia, ib)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(mae(GrayMap(2, 2), GrayMap(2, 3)), DimensionError);
  CHECK_THROWS_AS(mae(GrayMap(2, 2, 1.5), GrayMap(2, 2)), DomainError);
}

TEST_CASE("f-measure curve") {
  auto g = disc(10, 10, 4, 5, 3);
  auto perfect = f_measure_curve(g, g);
  CHECK(perfect.f_max == doctest::Approx(1.0));
  CHECK_FALSE(perfect.degenerate);

  auto empty = f_measure_curve(GrayMap(4, 4, 0.3), GrayMap(4, 4, 0.0));
  CHECK(empty.degenerate);
  CHECK(empty.f_max == 0.0);

  SplitMix64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_map(3, 3, rng);
    // Exact 1/255 levels exercise the threshold boundaries.
    if (trial % 2) for (auto& v : p.values) v = double(rng.below(256)) / 255.0;
    auto m = random_mask(3, 3, rng, 0.5);
    m.values[rng.below(9)] = 1.0;
    auto f = f_measure_curve(p, m);
    for (int t = 1; t <= 255; ++t) CHECK(f.curve[t - 1] == doctest::Approx(f_oracle(p, m, t)).epsilon(1e-14));
    for (double v : f.curve) CHECK(f.f_max >= v);
  }
}

TEST_CASE("s-measure against reference values") {
  CHECK(s_measure(mod_pred(6, 6, 37, 11), mod_gt(6, 6, 13, 5)) == doctest::Approx(0.3309215399776958).epsilon(1e-12));
  CHECK(s_measure(mod_pred(5, 9, 23, 7), mod_gt(5, 9, 5, 2)) == doctest::Approx(0.35057082603274331).epsilon(1e-12));
  CHECK(s_measure(mod_pred(8, 8, 41, 3), mod_gt(8, 8, 11, 6)) == doctest::Approx(0.31812015235977614).epsilon(1e-12));
  auto cubed = mod_pred(7, 7, 19, 4);
  for (auto& v : cubed.values) v = v * v * v;
  CHECK(s_measure(cubed, mod_gt(7, 7, 3, 1)) == doctest::Approx(0.41120564903177315).epsilon(1e-12));

  auto g = disc(9, 9, 4, 3, 2.5);
  GrayMap inverse = g, soft = g;
  for (auto& v : inverse.values) v = 1 - v;
  for (std::size_t i = 0; i < soft.size(); ++i)
    soft.values[i] = std::clamp(g.values[i] * 0.8 + 0.1 + (double(i % 5) - 2) * 0.03, 0.0, 1.0);
  CHECK(s_measure(inverse, g) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s_measure(soft, g) == doctest::Approx(0.95558291731464684).epsilon(1e-12));
  CHECK(s_measure(GrayMap(4, 4, 0.5), GrayMap(4, 4, 1.0)) == 0.5);
  CHECK(s_measure(g, g) == doctest::Approx(1.0));
  CHECK(s_measure(GrayMap(4, 4, 0.0), GrayMap(4, 4, 0.0)) == 1.0);
}

TEST_CASE("s-measure is transpose invariant and bounded") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = 3 + rng.below(6), w = 3 + rng.below(6);
    auto p = random_map(h, w, rng);
    auto g = random_mask(h, w, rng);
    const double s = s_measure(p, g);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    CHECK(s_measure(transposed(p), transposed(g)) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("e-measure") {
  CHECK(e_measure(mod_pred(6, 6, 37, 11), mod_gt(6, 6, 13, 5)) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(e_measure(mod_pred(5, 9, 23, 7), mod_gt(5, 9, 5, 2)) == doctest::Approx(0.25566853895432878).epsilon(1e-12));
  CHECK(e_measure(mod_pred(8, 8, 41, 3), mod_gt(8, 8, 11, 6)) == doctest::Approx(0.27130083280882772).epsilon(1e-12));
  auto cubed = mod_pred(7, 7, 19, 4);
  for (auto& v : cubed.values) v = v * v * v;
  CHECK(e_measure(cubed, mod_gt(7, 7, 3, 1)) == doctest::Approx(0.4792002148308307).epsilon(1e-12));

  auto g = disc(9, 9, 4, 3, 2.5);
  GrayMap inverse = g;
  for (auto& v : inverse.values) v = 1 - v;
  CHECK(e_measure(g, g) == doctest::Approx(1.0));
  CHECK(std::abs(e_measure(inverse, g)) < 1e-12);
  CHECK(e_measure(GrayMap(4, 4, 0.5), GrayMap(4, 4, 1.0)) == 0.0);
  // Degenerate ground truth scores the predicted background fraction. An
  // all-zero prediction has threshold 0, which marks every pixel foreground.
  CHECK(e_measure(GrayMap(4, 4, 0.0), GrayMap(4, 4, 0.0)) == 0.0);
  GrayMap one_hot(4, 4, 0.0);
  one_hot.values[5] = 1.0;
  CHECK(e_measure(one_hot, GrayMap(4, 4, 0.0)) == doctest::Approx(15.0 / 16));

  SplitMix64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = random_map(6, 5, rng);
    auto m = random_mask(6, 5, rng, trial % 3 == 0 ? 0.0 : 0.4);
    const double e = e_measure(p, m);
    CHECK(e == doctest::Approx(e_oracle(p, m)).epsilon(1e-12));
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
}

TEST_CASE("boundary displacement error") {
  auto g = square(8, 3, 3, 2);
  CHECK(bde(g, g).value == 0.0);
  auto shifted = square(8, 3, 4, 2);
  const auto r = bde(shifted, g);
  CHECK_FALSE(r.degenerate);
  CHECK(r.value == doctest::Approx(0.5));
  CHECK(r.value == doctest::Approx(bde_oracle(shifted, g)));

  const auto none = bde(GrayMap(8, 8, 0.2), g);
  CHECK(none.degenerate);
  CHECK(none.value == doctest::Approx(std::sqrt(128.0)));
  CHECK(none.value == doctest::Approx(11.31).epsilon(1e-3));

  // Every pixel of a 2x2 square, and the frame of a full map, is boundary.
  CHECK(boundary_pixels(g).size() == 4);
  CHECK(boundary_pixels(GrayMap(4, 4, 1.0)).size() == 12);

  SplitMix64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_map(9, 9, rng);
    auto m = random_mask(9, 9, rng, 0.5);
    p.values[0] = 1.0;
    m.values[80] = 1.0;
    const auto a = bde(p, m);
    GrayMap pb = p;
    for (auto& v : pb.values) v = v >= 0.5 ? 1.0 : 0.0;
    CHECK(a.value == doctest::Approx(bde_oracle(pb, m)).epsilon(1e-12));
    CHECK(a.value == doctest::Approx(bde(m, pb).value).epsilon(1e-12));
    CHECK(a.value >= 0.0);
  }
}

TEST_CASE("evaluate resizes and aggregate uses the mean curve") {
  auto g = disc(16, 16, 8, 8, 5);
  GrayMap small(8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) small.at(y, x) = g.at(2 * y, 2 * x);
  const auto r = evaluate(small, g);
  CHECK(r.mae < 0.2);
  CHECK(r.f_max > 0.8);
  for (double v : {r.mae, r.f_max, r.s_measure, r.e_measure}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  SplitMix64 rng(6);
  std::vector<EvalResult> all;
  for (int i = 0; i < 5; ++i) all.push_back(evaluate(random_map(6, 6, rng), random_mask(6, 6, rng)));
  const auto agg = aggregate(all);
  double mean_mae = 0, mean_max = 0;
  std::array<double, kFThresholds> curve{};
  for (const auto& e : all) {
    mean_mae += e.mae / 5;
    mean_max += e.f_max / 5;
    for (std::size_t t = 0; t < kFThresholds; ++t) curve[t] += e.f_curve[t] / 5;
  }
  CHECK(agg.mae == doctest::Approx(mean_mae));
  CHECK(agg.f_max == doctest::Approx(*std::max_element(curve.begin(), curve.end())));
  CHECK(agg.f_max <= mean_max + 1e-12);
}
