#include <cmath>
#include <cstring>

#include "doctest.h"
#include "graftnet/grad_check.hpp"
#include "graftnet/gtns.hpp"
#include "graftnet/ops.hpp"
#include "test_util.hpp"

using namespace graftnet;
using graftnet::testing::max_abs_diff;
using graftnet::testing::random_tensor;

namespace {

// Reference implementations, deliberately naive.
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out.mutable_values()[i * n + j] = s;
    }
  return out;
}

Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride, std::size_t pad) {
  const long n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0), k = w.dim(2);
  const long oh = (h + 2 * long(pad) - k) / long(stride) + 1, ow = (wd + 2 * long(pad) - k) / long(stride) + 1;
  Tensor<double> out(Shape{std::size_t(n), std::size_t(o), std::size_t(oh), std::size_t(ow)});
  for (long b = 0; b < n; ++b)
    for (long oc = 0; oc < o; ++oc)
      for (long y = 0; y < oh; ++y)
        for (long xx = 0; xx < ow; ++xx) {
          double s = 0;
          for (long ic = 0; ic < c; ++ic)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const long iy = y * long(stride) + ky - long(pad), ix = xx * long(stride) + kx - long(pad);
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                s += x[((b * c + ic) * h + iy) * wd + ix] * w[((oc * c + ic) * k + ky) * k + kx];
              }
          out.mutable_values()[((b * o + oc) * oh + y) * ow + xx] = s;
        }
  return out;
}

// Weighted sum with fixed random coefficients: turns any tensor into a scalar
// whose gradient exercises every output element differently.
Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 99) {
  SplitMix64 rng(seed);
  auto w = random_tensor<double>(y.shape(), rng, -1.0, 1.0);
  return sum(mul(y, w));
}

}  // namespace

TEST_SUITE("tensor_core") {
  TEST_CASE("matmul identity and oracle") {
    Tensor<double> eye(Shape{2, 2}, {1, 0, 0, 1});
    auto r = matmul(eye, eye);
    CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{1, 0, 0, 1});
    Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
    auto r2 = matmul(a, eye);
    CHECK(std::vector<double>(r2.values().begin(), r2.values().end()) == std::vector<double>{1, 2, 3, 4});

    SplitMix64 rng(3);
    auto x = random_tensor<double>({3, 4}, rng);
    auto y = random_tensor<double>({4, 2}, rng);
    CHECK(max_abs_diff(matmul(x, y), matmul_oracle(x, y)) < 1e-12);
  }

  TEST_CASE("matmul batched and shared right operand") {
    SplitMix64 rng(4);
    auto x = random_tensor<double>({2, 3, 4}, rng);
    auto y = random_tensor<double>({2, 4, 5}, rng);
    auto w = random_tensor<double>({4, 5}, rng);
    auto r = matmul(x, y);
    auto rs = matmul(x, w);
    for (std::size_t b = 0; b < 2; ++b) {
      Tensor<double> xb(Shape{3, 4}, std::vector<double>(x.values().begin() + b * 12, x.values().begin() + b * 12 + 12));
      Tensor<double> yb(Shape{4, 5}, std::vector<double>(y.values().begin() + b * 20, y.values().begin() + b * 20 + 20));
      auto o1 = matmul_oracle(xb, yb);
      auto o2 = matmul_oracle(xb, w);
      for (std::size_t i = 0; i < 15; ++i) {
        CHECK(r[b * 15 + i] == doctest::Approx(o1[i]).epsilon(1e-12));
        CHECK(rs[b * 15 + i] == doctest::Approx(o2[i]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("matmul shape mismatch") {
    CHECK_THROWS_AS(matmul(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{2, 3})), DimensionError);
  }

  TEST_CASE("softmax rows") {
    auto z = softmax_rows(Tensor<double>(Shape{1, 4}, 0.0));
    for (double v : z.values()) CHECK(v == 0.25);
    auto big = softmax_rows(Tensor<float>(Shape{1, 2}, {1000.f, 1000.f}));
    CHECK(big[0] == 0.5f);
    CHECK(big[1] == 0.5f);
    auto s = softmax_rows(Tensor<float>(Shape{1, 3}, {1.f, 2.f, 3.f}));
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(std::exp(i + 1.0) / denom).epsilon(1e-6));

    SplitMix64 rng(5);
    auto x = random_tensor<float>({7, 13}, rng, -1e3, 1e3);
    auto y = softmax_rows(x);
    for (std::size_t r = 0; r < 7; ++r) {
      double acc = 0;
      for (std::size_t j = 0; j < 13; ++j) acc += y[r * 13 + j];
      CHECK(std::abs(acc - 1.0) < 1e-6);
    }
  }

  TEST_CASE("conv2d") {
    Tensor<double> x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto id = conv2d(x, Tensor<double>(Shape{1, 1, 1, 1}, 1.0), Tensor<double>(), 1, 0);
    CHECK(max_abs_diff(id, x) == 0.0);
    auto box = conv2d(Tensor<double>(Shape{1, 1, 3, 3}, 1.0), Tensor<double>(Shape{1, 1, 3, 3}, 1.0),
                      Tensor<double>(), 1, 1);
    CHECK(box[4] == 9.0);
    CHECK(box[0] == 4.0);

    SplitMix64 rng(6);
    auto in = random_tensor<double>({1, 2, 5, 5}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    CHECK(max_abs_diff(conv2d(in, w, Tensor<double>(), 1, 1), conv_oracle(in, w, 1, 1)) < 1e-12);
    auto strided = conv2d(in, w, Tensor<double>(), 2, 1);
    CHECK(strided.shape() == Shape{1, 3, 3, 3});
    CHECK(max_abs_diff(strided, conv_oracle(in, w, 2, 1)) < 1e-12);
  }

  TEST_CASE("conv2d rejects bad kernels") {
    Tensor<double> x(Shape{1, 1, 2, 2});
    CHECK_THROWS_AS(conv2d(x, Tensor<double>(Shape{1, 1, 5, 5}), Tensor<double>(), 1, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor<double>(Shape{1, 1, 2, 2}), Tensor<double>(), 1, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor<double>(Shape{1, 2, 1, 1}), Tensor<double>(), 1, 0), DimensionError);
  }

  TEST_CASE("layer norm") {
    Tensor<double> one(Shape{2}, 1.0), zero(Shape{2}, 0.0);
    auto c = layer_norm(Tensor<double>(Shape{3, 2}, 5.0), one, zero);
    for (double v : c.values()) CHECK(v == 0.0);
    auto y = layer_norm(Tensor<double>(Shape{1, 2}, {1, 3}), one, zero);
    CHECK(y[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
    Tensor<double> beta(Shape{2}, {0.5, -2});
    auto g0 = layer_norm(Tensor<double>(Shape{1, 2}, {1, 3}), zero, beta);
    CHECK(g0[0] == 0.5);
    CHECK(g0[1] == -2.0);
  }

  TEST_CASE("batch norm") {
    Tensor<double> g(Shape{2}, 1.0), b(Shape{2}, {0.25, -1});
    BatchNormState<double> st(2);
    CHECK_THROWS_AS(batch_norm2d(Tensor<double>(Shape{1, 2, 1, 1}), g, b, st, true), DegenerateBatchError);
    auto c = batch_norm2d(Tensor<double>(Shape{2, 2, 2, 2}, 3.0), g, b, st, true);
    for (std::size_t i = 0; i < 16; ++i) CHECK(c[i] == ((i / 4) % 2 == 0 ? 0.25 : -1.0));

    SplitMix64 rng(8);
    auto x = random_tensor<double>({4, 3, 5, 5}, rng, -3, 7);
    BatchNormState<double> st3(3);
    auto y = batch_norm2d(x, Tensor<double>(Shape{3}, 1.0), Tensor<double>(Shape{3}, 0.0), st3, true);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double m = 0, v = 0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t p = 0; p < 25; ++p) m += y[(n * 3 + ch) * 25 + p];
      m /= 100;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t p = 0; p < 25; ++p) v += std::pow(y[(n * 3 + ch) * 25 + p] - m, 2);
      v /= 100;
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::abs(v - 1) < 1e-4);
    }

    BatchNormState<double> fresh(2);
    Tensor<double> x1(Shape{1, 2, 1, 1}, {2.0, -4.0});
    auto e = batch_norm2d(x1, g, Tensor<double>(Shape{2}, 0.0), fresh, false);
    CHECK(e[0] == doctest::Approx(2.0 / std::sqrt(1 + 1e-5)));
    CHECK(e[1] == doctest::Approx(-4.0 / std::sqrt(1 + 1e-5)));
  }

  TEST_CASE("batch norm running statistics") {
    Tensor<double> x(Shape{2, 1, 1, 2}, {1, 2, 3, 4});
    BatchNormState<double> st(1);
    batch_norm2d(x, Tensor<double>(Shape{1}, 1.0), Tensor<double>(Shape{1}, 0.0), st, true);
    CHECK(st.running_mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 2.5));
    CHECK(st.running_var[0] == doctest::Approx(0.9 * 1 + 0.1 * (5.0 / 3.0)));
  }

  TEST_CASE("bilinear resize") {
    SplitMix64 rng(9);
    auto x = random_tensor<float>({2, 3, 5, 7}, rng);
    auto same = bilinear_resize(x, 5, 7);
    CHECK(std::memcmp(same.data(), x.data(), x.numel() * sizeof(float)) == 0);
    auto rep = bilinear_resize(Tensor<double>(Shape{1, 1, 1, 1}, 0.75), 4, 4);
    for (double v : rep.values()) CHECK(v == 0.75);

    // align_corners=false, 2 -> 4: source coords -0.25(clamped 0), 0.25, 0.75, 1.25(clamped to last).
    Tensor<double> s(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    auto up = bilinear_resize(s, 4, 4);
    const double wts[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) {
        const double top = wts[xx][0] * 1 + wts[xx][1] * 2;
        const double bot = wts[xx][0] * 3 + wts[xx][1] * 4;
        CHECK(up[y * 4 + xx] == doctest::Approx(wts[y][0] * top + wts[y][1] * bot).epsilon(1e-15));
      }
  }

  TEST_CASE("elementwise") {
    auto r = relu(Tensor<double>(Shape{2}, {-1, 2}));
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.0);
    CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
    CHECK(sigmoid(Tensor<double>::scalar(500.0)).item() == 1.0);
    CHECK(sigmoid(Tensor<double>::scalar(-500.0)).item() == 0.0);

    Tensor<double> z = Tensor<double>::scalar(0.0);
    z.set_requires_grad(true);
    Tape<double> tape;
    {
      TapeScope<double> scope(tape);
      auto a = abs(z);
      tape.backward(a);
    }
    CHECK(z.grad()[0] == 0.0);
  }

  TEST_CASE("broadcast rules") {
    Tensor<double> a(Shape{2, 3}, 1.0), bias(Shape{3}, {1, 2, 3}), col(Shape{2, 1}, {10, 20});
    auto s = add(a, bias);
    CHECK(s[5] == 4.0);
    auto t = add(a, col);
    CHECK(t[4] == 21.0);
    CHECK_THROWS_AS(add(a, Tensor<double>(Shape{2}, 0.0)), DimensionError);
  }

  TEST_CASE("reshape transpose flatten") {
    SplitMix64 rng(10);
    auto x = random_tensor<float>({2, 3, 4, 5}, rng);
    auto f = flatten_spatial(x);
    CHECK(f.shape() == Shape{2, 20, 3});
    auto back = unflatten_spatial(f, 4, 5);
    CHECK(std::memcmp(back.data(), x.data(), x.numel() * sizeof(float)) == 0);
    auto m = random_tensor<float>({3, 4, 6}, rng);
    auto tt = transpose(transpose(m));
    CHECK(tt.shape() == m.shape());
    CHECK(std::memcmp(tt.data(), m.data(), m.numel() * sizeof(float)) == 0);

    Tensor<double> small(Shape{1, 1, 2, 2}, {10, 11, 12, 13});
    auto fs = flatten_spatial(small);
    CHECK(std::vector<double>(fs.values().begin(), fs.values().end()) == std::vector<double>{10, 11, 12, 13});
    CHECK_THROWS_AS(reshape(x, Shape{7, 7}), DimensionError);
  }

  TEST_CASE("space_to_depth and heads") {
    Tensor<double> x(Shape{1, 1, 2, 4}, {0, 1, 2, 3, 4, 5, 6, 7});
    auto s = space_to_depth(x, 2);
    CHECK(s.shape() == Shape{1, 4, 1, 2});
    CHECK(std::vector<double>(s.values().begin(), s.values().end()) == std::vector<double>{0, 2, 1, 3, 4, 6, 5, 7});
    SplitMix64 rng(11);
    auto t = random_tensor<double>({2, 5, 6}, rng);
    auto round = merge_heads(split_heads(t, 3), 3);
    CHECK(max_abs_diff(round, t) == 0.0);
  }

  TEST_CASE("backward basics") {
    Tensor<double> x(Shape{3}, {1, -2, 3});
    x.set_requires_grad(true);
    Tape<double> tape;
    {
      TapeScope<double> scope(tape);
      auto l = sum(x);
      tape.backward(l);
      for (double g : x.grad()) CHECK(g == 1.0);
      CHECK_THROWS_AS(tape.backward(l), StateError);
    }
    tape.reset();
    x.zero_grad();
    {
      TapeScope<double> scope(tape);
      auto l = sum(mul(x, x));
      tape.backward(l);
    }
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == -4.0);
    CHECK(x.grad()[2] == 6.0);

    tape.reset();
    x.zero_grad();
    {
      TapeScope<double> scope(tape);
      auto l = add(sum(x), sum(x));
      tape.backward(l);
    }
    for (double g : x.grad()) CHECK(g == 2.0);

    Tape<double> other;
    TapeScope<double> scope(other);
    auto y = mul(x, x);
    CHECK_THROWS_AS(other.backward(y), DimensionError);
    Tape<double> empty;
    auto s = sum(Tensor<double>(Shape{2}, 1.0));
    CHECK_THROWS_AS(empty.backward(s), StateError);
  }

  TEST_CASE("non-finite outputs are rejected") {
    Tensor<double> big(Shape{1}, 1e300);
    CHECK_THROWS_AS(mul(big, big), NumericError);
  }

  TEST_CASE("grad_check") {
    SplitMix64 rng(12);
    auto x = random_tensor<double>({3, 4}, rng);
    CHECK(grad_check([](const Tensor<double>& t) { return sum(t); }, Tensor<double>(Shape{3, 4}, 0.0)) == 0.0);
    CHECK(grad_check([](const Tensor<double>& t) { return sum(t); }, x) < 1e-10);
    CHECK(grad_check([](const Tensor<double>& t) { auto s = softmax_rows(t); return sum(mul(s, s)); }, x) < 1e-6);
    CHECK_THROWS_AS(grad_check([](const Tensor<double>& t) { return relu(t); }, x), DimensionError);
  }

  TEST_CASE("every differentiable op passes grad_check on 5 seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SplitMix64 rng(seed * 1000);
      auto a = random_tensor<double>({2, 3, 4}, rng);
      auto b = random_tensor<double>({2, 4, 3}, rng);
      auto bias = random_tensor<double>({4}, rng);
      auto img = random_tensor<double>({2, 3, 6, 6}, rng);
      auto wk = random_tensor<double>({4, 3, 3, 3}, rng);
      auto bk = random_tensor<double>({4}, rng);
      auto gam = random_tensor<double>({3}, rng);
      auto bet = random_tensor<double>({3}, rng);
      auto g4 = random_tensor<double>({4}, rng);
      auto b4 = random_tensor<double>({4}, rng);
      auto prob = random_tensor<double>({2, 1, 3, 3}, rng, 0.05, 0.95);
      auto tgt = random_tensor<double>({2, 1, 3, 3}, rng, 0.0, 1.0);
      auto wts = random_tensor<double>({2, 1, 3, 3}, rng, 1.0, 3.0);

      auto check = [&](const char* name, std::function<Tensor<double>()> f, std::vector<NamedInput> in) {
        auto rep = grad_check([&] { return probe(f()); }, in);
        INFO(name << " seed " << seed << " worst " << rep.worst_input << "[" << rep.worst_index << "]");
        CHECK(rep.max_rel_error < 1e-6);
      };
      check("add", [&] { return add(a, bias); }, {{"a", a}, {"bias", bias}});
      check("sub", [&] { return sub(a, bias); }, {{"a", a}, {"bias", bias}});
      check("mul", [&] { return mul(a, bias); }, {{"a", a}, {"bias", bias}});
      check("scale", [&] { return scale(a, 1.7); }, {{"a", a}});
      check("relu", [&] { return relu(a); }, {{"a", a}});
      check("sigmoid", [&] { return sigmoid(a); }, {{"a", a}});
      check("abs", [&] { return abs(a); }, {{"a", a}});
      check("sum", [&] { return sum(a); }, {{"a", a}});
      check("mean", [&] { return mean(a); }, {{"a", a}});
      check("matmul", [&] { return matmul(a, b); }, {{"a", a}, {"b", b}});
      check("transpose", [&] { return transpose(a); }, {{"a", a}});
      check("reshape", [&] { return reshape(a, {4, 6}); }, {{"a", a}});
      check("flatten_spatial", [&] { return flatten_spatial(img); }, {{"img", img}});
      check("unflatten_spatial", [&] { return unflatten_spatial(reshape(a, {2, 4, 3}), 2, 2); }, {{"a", a}});
      check("space_to_depth", [&] { return space_to_depth(img, 2); }, {{"img", img}});
      check("split_heads", [&] { return split_heads(reshape(a, {2, 2, 6}), 2); }, {{"a", a}});
      check("merge_heads", [&] { return merge_heads(a, 2); }, {{"a", a}});
      check("group_mean", [&] { return group_mean(a, 2); }, {{"a", a}});
      check("softmax_rows", [&] { return softmax_rows(a); }, {{"a", a}});
      check("layer_norm", [&] { return layer_norm(a, g4, b4); }, {{"a", a}, {"g", g4}, {"b", b4}});
      check("conv2d", [&] { return conv2d(img, wk, bk, 1, 1); }, {{"img", img}, {"w", wk}, {"b", bk}});
      check("conv2d_stride2", [&] { return conv2d(img, wk, bk, 2, 1); }, {{"img", img}, {"w", wk}});
      BatchNormState<double> st(3);
      check("batch_norm2d", [&] { return batch_norm2d(img, gam, bet, st, true); },
            {{"img", img}, {"g", gam}, {"b", bet}});
      check("batch_norm2d_eval", [&] { return batch_norm2d(img, gam, bet, st, false); },
            {{"img", img}, {"g", gam}, {"b", bet}});
      check("bilinear_up", [&] { return bilinear_resize(img, 9, 11); }, {{"img", img}});
      check("bilinear_down", [&] { return bilinear_resize(img, 4, 3); }, {{"img", img}});
      check("weighted_bce", [&] { return weighted_bce(prob, tgt, wts); }, {{"p", prob}});
      check("soft_iou", [&] { return soft_iou(prob, tgt); }, {{"p", prob}});
    }
  }

  TEST_CASE("GTNS encode/decode") {
    Tensor<float> t(Shape{2, 3}, {1.5f, -2.f, 3.25f, 0.f, 1e-20f, 7.f});
    auto bytes = gtns::encode(t);
    REQUIRE(bytes.size() == 4 + 3 + 2 * 4 + 6 * 4);
    CHECK(std::memcmp(bytes.data(), "GTNS", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 2);
    CHECK(bytes[7] == 2);
    CHECK(bytes[8] == 0);
    CHECK(bytes[11] == 3);
    auto back = gtns::decode<float>(bytes);
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.data(), t.data(), 6 * sizeof(float)) == 0);

    SplitMix64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      Shape s;
      const auto rank = rng.below(4);
      for (std::uint64_t i = 0; i < rank; ++i) s.push_back(1 + rng.below(4));
      auto d = random_tensor<double>(s, rng, -1e6, 1e6);
      auto r = gtns::decode<double>(gtns::encode(d));
      CHECK(r.shape() == d.shape());
      CHECK(std::memcmp(r.data(), d.data(), d.numel() * sizeof(double)) == 0);
    }
    bytes.pop_back();
    CHECK_THROWS_AS(gtns::decode<float>(bytes), IoError);
    CHECK_THROWS_AS(gtns::decode<float>({'N', 'O', 'P', 'E', 1, 0, 0}), IoError);
  }
}
