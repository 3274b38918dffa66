#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "graftnet/grad_check.hpp"
#include "graftnet/losses.hpp"
#include "test_util.hpp"

using namespace graftnet;
using graftnet::testing::random_tensor;

namespace {

Tensor<double> binary_tensor(const Shape& shape, SplitMix64& rng, double p = 0.5) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.coin(p) ? 1.0 : 0.0;
  return Tensor<double>(shape, std::move(v));
}

// Weighted BCE straight from the definition, in long double.
double agl_oracle(const std::vector<double>& g, const std::vector<double>& cam, const std::vector<double>& rp,
                  const std::vector<double>& sp, double beta) {
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const long double omega = 0.5L * (std::fabs(g[i] - rp[i]) + std::fabs(g[i] - sp[i])) + 1.0L;
    const long double w = 1.0L + beta * omega;
    const long double p = cam[i];
    num += w * (g[i] * std::log(p) + (1 - g[i]) * std::log(1 - p));
    den += w;
  }
  return double(-num / den);
}

std::vector<double> vec(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

Tensor<double> sigmoid_of(const Tensor<double>& logits) { return sigmoid(logits); }

}  // namespace

TEST_CASE("attention matrix of a mask") {
  auto zero = attn_matrix(Tensor<double>(Shape{2, 2}));
  CHECK(zero.shape() == Shape{4, 4});
  for (double v : zero.values()) CHECK(v == 0.0);

  auto ones = attn_matrix(Tensor<double>(Shape{2, 2}, 1.0));
  for (double v : ones.values()) CHECK(v == 1.0);

  auto diag = attn_matrix(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
  for (std::size_t x = 0; x < 4; ++x)
    for (std::size_t y = 0; y < 4; ++y) {
      const bool corner = (x == 0 || x == 3) && (y == 0 || y == 3);
      CHECK(diag[x * 4 + y] == (corner ? 1.0 : 0.0));
    }

  CHECK_THROWS_AS(attn_matrix(Tensor<double>(Shape{2, 2}, 1.5)), DomainError);
  CHECK_THROWS_AS(attn_matrix(Tensor<double>(Shape{2, 2}, -0.1)), DomainError);
  CHECK_THROWS_AS(attn_matrix(Tensor<double>(Shape{1, 2, 2, 2})), DimensionError);
}

TEST_CASE("attention matrix is symmetric and positive semidefinite") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_tensor<double>({2, 1, 3, 3}, rng, 0.0, 1.0);
    auto a = attn_matrix(m);
    REQUIRE(a.shape() == Shape{2, 1, 9, 9});
    for (std::size_t b = 0; b < 2; ++b) {
      const double* ab = a.data() + b * 81;
      for (std::size_t x = 0; x < 9; ++x)
        for (std::size_t y = 0; y < 9; ++y) CHECK(ab[x * 9 + y] == ab[y * 9 + x]);
      std::vector<double> v(9);
      for (auto& e : v) e = rng.uniform(-1, 1);
      double q = 0;
      for (std::size_t x = 0; x < 9; ++x)
        for (std::size_t y = 0; y < 9; ++y) q += v[x] * ab[x * 9 + y] * v[y];
      CHECK(q >= -1e-12);
    }
    auto bin = attn_matrix(binary_tensor({1, 1, 3, 3}, rng));
    for (double v : bin.values()) CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_CASE("pixel bce") {
  CHECK(bce_pixel(1, 1.0 - 1e-12) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce_pixel(0, 0.5) == doctest::Approx(std::log(0.5)));
  CHECK(bce_pixel(0, 0.5) == doctest::Approx(-0.6931).epsilon(1e-4));
  const double clamped = bce_pixel(1, 1e-9);
  CHECK(std::isfinite(clamped));
  CHECK(clamped == doctest::Approx(std::log(1e-7)));
  CHECK(bce_pixel(0.3, 0.4) == doctest::Approx(0.3 * std::log(0.4) + 0.7 * std::log(0.6)));
}

TEST_CASE("attention guided loss") {
  SplitMix64 rng(5);
  SUBCASE("matching auxiliaries reduce to mean bce") {
    auto g = binary_tensor({1, 1, 9, 9}, rng);
    auto cam = random_tensor<double>({1, 1, 9, 9}, rng, 0.05, 0.95);
    const auto plain = agl_oracle(vec(g), vec(cam), vec(g), vec(g), 0.0);
    for (double beta : {0.0, 0.5, 1.0, 7.0}) CHECK(agl(g, cam, g, g, beta).item() == doctest::Approx(plain));
  }
  SUBCASE("beta zero is exactly mean bce") {
    auto g = binary_tensor({2, 1, 4, 4}, rng);
    auto cam = random_tensor<double>({2, 1, 4, 4}, rng, 0.05, 0.95);
    auto rp = random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.0);
    auto sp = random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.0);
    CHECK(agl(g, cam, rp, sp, 0.0).item() == bce_loss(cam, g).item());
  }
  SUBCASE("2x2 hand case") {
    Tensor<double> g(Shape{2, 2}, std::vector<double>{1, 0, 0, 0});
    Tensor<double> cam(Shape{2, 2}, 0.5), rp(Shape{2, 2}, 0.0), sp(Shape{2, 2}, 1.0);
    // omega = 1.5 everywhere, so every weight is 2.5 and the loss is -log(0.5).
    const double expected = agl_oracle(vec(g), vec(cam), vec(rp), vec(sp), 1.0);
    CHECK(expected == doctest::Approx(std::log(2.0)));
    CHECK(std::abs(agl(g, cam, rp, sp, 1.0).item() - expected) < 1e-12);
  }
  SUBCASE("random inputs match the oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      auto g = binary_tensor({1, 1, 16, 16}, rng, 0.3);
      auto cam = random_tensor<double>({1, 1, 16, 16}, rng, 0.01, 0.99);
      auto rp = random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
      auto sp = random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
      const double beta = rng.uniform(0, 3);
      CHECK(agl(g, cam, rp, sp, beta).item() ==
            doctest::Approx(agl_oracle(vec(g), vec(cam), vec(rp), vec(sp), beta)).epsilon(1e-12));
      const auto omega = agl_omega(g, rp, sp);
      for (double w : omega.values()) {
        CHECK(w >= 1.0);
        CHECK(w <= 2.0);
      }
    }
  }
  SUBCASE("invariant to a shared permutation") {
    auto g = binary_tensor({1, 1, 4, 4}, rng);
    auto cam = random_tensor<double>({1, 1, 4, 4}, rng, 0.05, 0.95);
    auto rp = random_tensor<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
    auto sp = random_tensor<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
    const double base = agl(g, cam, rp, sp, 1.0).item();
    std::vector<std::size_t> perm(4);
    std::iota(perm.begin(), perm.end(), 0);
    int count = 0;
    do {
      auto permute = [&](const Tensor<double>& t) {
        Tensor<double> out(t.shape());
        for (std::size_t x = 0; x < 4; ++x)
          for (std::size_t y = 0; y < 4; ++y) out.mutable_values()[perm[x] * 4 + perm[y]] = t[x * 4 + y];
        return out;
      };
      CHECK(agl(permute(g), permute(cam), permute(rp), permute(sp), 1.0).item() == doctest::Approx(base));
      ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(count == 24);
  }
  SUBCASE("no gradient reaches the auxiliary matrices") {
    auto g = binary_tensor({1, 1, 4, 4}, rng);
    auto cam = random_tensor<double>({1, 1, 4, 4}, rng, 0.05, 0.95);
    auto rp = random_tensor<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
    auto sp = random_tensor<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
    cam.set_requires_grad(true);
    rp.set_requires_grad(true);
    sp.set_requires_grad(true);
    Tape<double> tape;
    {
      TapeScope<double> scope(&tape);
      tape.backward(agl(g, cam, rp, sp, 1.0));
    }
    for (double v : rp.grad()) CHECK(v == 0.0);
    for (double v : sp.grad()) CHECK(v == 0.0);
    double total = 0;
    for (double v : cam.grad()) total += std::abs(v);
    CHECK(total > 0);
  }
  CHECK_THROWS_AS(agl(Tensor<double>(Shape{2, 2}), Tensor<double>(Shape{3, 3}, 0.5), Tensor<double>(Shape{2, 2}),
                      Tensor<double>(Shape{2, 2}), 1.0),
                  DimensionError);
}

TEST_CASE("iou loss") {
  SplitMix64 rng(7);
  auto g = binary_tensor({1, 1, 5, 5}, rng);
  CHECK(iou_loss(g, g).item() == 0.0);
  const std::size_t n = 12;
  CHECK(iou_loss(Tensor<double>(Shape{1, 1, 3, 4}), Tensor<double>(Shape{1, 1, 3, 4}, 1.0)).item() ==
        doctest::Approx(double(n) / (n + 1)));
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_tensor<double>({1, 1, 3, 3}, rng, 0.0, 1.0);
    auto t = binary_tensor({1, 1, 3, 3}, rng);
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < 9; ++i) {
      inter += p[i] * t[i];
      uni += p[i] + t[i] - p[i] * t[i];
    }
    CHECK(iou_loss(p, t).item() == doctest::Approx(1.0 - (inter + 1) / (uni + 1)).epsilon(1e-12));
  }
}

TEST_CASE("mask downsampling") {
  // 4x4 -> 2x2: blocks with 4, 2, 1 and 0 foreground pixels.
  Tensor<double> m(Shape{1, 1, 4, 4}, std::vector<double>{1, 1, 1, 0,  //
                                                          1, 1, 1, 0,  //
                                                          0, 1, 0, 0,  //
                                                          0, 0, 0, 0});
  auto d = downsample_mask(m, 2, 2);
  CHECK(vec(d) == std::vector<double>{1, 1, 0, 0});
  CHECK(vec(downsample_mask(m, 4, 4)) == vec(m));
  CHECK(vec(downsample_mask(m, 1, 1)) == std::vector<double>{0});  // 7 of 16
  CHECK_THROWS_AS(downsample_mask(m, 3, 3), DimensionError);
}

TEST_CASE("total loss composition") {
  SplitMix64 rng(9);
  SUBCASE("perfect predictions give almost zero") {
    // A mask built from 4x4 blocks survives every downsampling intact.
    auto coarse = binary_tensor({2, 1, 4, 4}, rng);
    Tensor<double> mask(Shape{2, 1, 16, 16});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
          mask.mutable_values()[(b * 16 + y) * 16 + x] = coarse[(b * 4 + y / 4) * 4 + x / 4];
    auto cam = attn_matrix(coarse);
    auto loss = total_loss(mask, coarse, coarse, cam, mask, 1.0);
    CHECK(loss.total.item() >= 0.0);
    CHECK(loss.total.item() <= 1e-5);
  }
  SUBCASE("auxiliary terms carry an eighth") {
    auto a = Tensor<double>::scalar(0.3), b = Tensor<double>::scalar(0.2), c = Tensor<double>::scalar(0.4);
    const double t1 = compose_total(a, b, c, Tensor<double>::scalar(0.5)).item();
    const double t2 = compose_total(a, b, c, Tensor<double>::scalar(1.0)).item();
    CHECK(t2 - t1 == doctest::Approx(0.5 / 8).epsilon(1e-12));
  }
  SUBCASE("breakdown adds up and stays nonnegative") {
    for (int trial = 0; trial < 10; ++trial) {
      auto mask = binary_tensor({2, 1, 8, 8}, rng);
      auto pred = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);
      auto rp = random_tensor<double>({2, 1, 2, 2}, rng, 0.0, 1.0);
      auto sp = random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.0);
      auto cam = random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.0);
      auto loss = total_loss(pred, rp, sp, cam, mask, 1.0);
      CHECK(loss.total.item() >= 0.0);
      CHECK(loss.total.item() ==
            doctest::Approx(loss.bce_p + loss.iou_p + loss.agl + loss.aux / 8).epsilon(1e-12));
      auto no_agl = total_loss(pred, rp, sp, Tensor<double>(), mask, 1.0);
      CHECK(no_agl.agl == 0.0);
      auto only_p = total_loss(pred, Tensor<double>(), Tensor<double>(), Tensor<double>(), mask, 1.0);
      CHECK(only_p.total.item() == doctest::Approx(only_p.bce_p + only_p.iou_p));
    }
  }
  SUBCASE("composite gradient on a 4x4 toy") {
    auto mask = binary_tensor({1, 1, 4, 4}, rng);
    auto lp = random_tensor<double>({1, 1, 4, 4}, rng);
    auto lr = random_tensor<double>({1, 1, 2, 2}, rng);
    auto ls = random_tensor<double>({1, 1, 2, 2}, rng);
    auto lc = random_tensor<double>({1, 1, 4, 4}, rng);
    for (auto* t : {&lp, &lr, &ls, &lc}) t->set_requires_grad(true);
    auto loss = [&](double beta) {
      return [&, beta] {
        return total_loss(sigmoid_of(lp), sigmoid_of(lr), sigmoid_of(ls), sigmoid_of(lc), mask, beta).total;
      };
    };
    // RP and SP also enter the loss through the detached weights, which finite
    // differences would see; beta = 0 removes that path.
    auto all = grad_check(loss(0.0), {{"pred", lp}, {"rp", lr}, {"sp", ls}, {"cam", lc}});
    INFO(all.worst_input << "[" << all.worst_index << "]");
    CHECK(all.max_rel_error < 1e-5);
    auto weighted = grad_check(loss(1.0), {{"pred", lp}, {"cam", lc}});
    CHECK(weighted.max_rel_error < 1e-5);
  }
  CHECK_THROWS_AS(total_loss(Tensor<double>(Shape{1, 1, 4, 4}), Tensor<double>(), Tensor<double>(),
                             Tensor<double>(Shape{1, 1, 4, 4}, 0.5), Tensor<double>(Shape{1, 1, 4, 4}), 1.0),
                  DimensionError);
}
