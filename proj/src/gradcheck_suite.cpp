#include "graftnet/gradcheck_suite.hpp"

#include <algorithm>
#include <map>

#include "graftnet/error.hpp"
#include "graftnet/grad_check.hpp"
#include "graftnet/losses.hpp"
#include "graftnet/model.hpp"

namespace graftnet {

namespace {

using Fn = std::function<Tensor<double>()>;

Tensor<double> rand_t(const Shape& shape, SplitMix64& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(shape, std::move(v));
}

// Values with |x| >= 0.1, away from the kinks of relu and abs.
Tensor<double> off_kink(const Shape& shape, SplitMix64& rng) {
  auto t = rand_t(shape, rng);
  for (auto& v : t.mutable_values()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

Tensor<double> binary(const Shape& shape, SplitMix64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.coin(0.5) ? 1.0 : 0.0;
  return Tensor<double>(shape, std::move(v));
}

Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return sum(mul(y, rand_t(y.shape(), rng, -1.0, 1.0)));
}

SuiteResult run(const std::string& name, std::uint64_t seed, double tol, const Fn& f,
                std::vector<NamedInput> inputs, const GradCheckOptions& opts = {}) {
  for (auto& in : inputs) in.tensor.set_requires_grad(true);
  const auto rep = grad_check(f, inputs, opts);
  return {name, seed, rep.max_rel_error, tol, rep.checked, rep.worst_input + "[" + std::to_string(rep.worst_index) + "]"};
}

SuiteResult check_op(const std::string& name, std::uint64_t seed) {
  SplitMix64 rng(seed * 7919 + 1);
  auto a = off_kink({2, 3, 4}, rng);
  auto b = rand_t({2, 4, 3}, rng);
  auto row = rand_t({4}, rng);
  auto row2 = rand_t({4}, rng);
  auto img = rand_t({2, 3, 6, 6}, rng);
  auto wk = rand_t({4, 3, 3, 3}, rng, -0.5, 0.5);
  auto bk = rand_t({4}, rng);
  auto gam = rand_t({3}, rng, 0.5, 1.5);
  auto bet = rand_t({3}, rng);
  auto prob = rand_t({2, 1, 3, 3}, rng, 0.05, 0.95);
  auto tgt = rand_t({2, 1, 3, 3}, rng, 0.0, 1.0);
  auto wts = rand_t({2, 1, 3, 3}, rng, 1.0, 3.0);
  const auto ps = seed + 100;
  auto op = [&](const Fn& f, std::vector<NamedInput> in) {
    return run(name, seed, kOpTolerance, [&] { return probe(f(), ps); }, std::move(in));
  };
  if (name == "add") return op([&] { return add(a, row); }, {{"a", a}, {"b", row}});
  if (name == "sub") return op([&] { return sub(a, row); }, {{"a", a}, {"b", row}});
  if (name == "mul") return op([&] { return mul(a, row); }, {{"a", a}, {"b", row}});
  if (name == "scale") return op([&] { return scale(a, 1.7); }, {{"a", a}});
  if (name == "relu") return op([&] { return relu(a); }, {{"a", a}});
  if (name == "sigmoid") return op([&] { return sigmoid(a); }, {{"a", a}});
  if (name == "abs") return op([&] { return abs(a); }, {{"a", a}});
  if (name == "sum") return op([&] { return sum(a); }, {{"a", a}});
  if (name == "mean") return op([&] { return mean(a); }, {{"a", a}});
  if (name == "matmul") return op([&] { return matmul(a, b); }, {{"a", a}, {"b", b}});
  if (name == "transpose") return op([&] { return transpose(a); }, {{"a", a}});
  if (name == "reshape") return op([&] { return reshape(a, {4, 6}); }, {{"a", a}});
  if (name == "flatten_spatial") return op([&] { return flatten_spatial(img); }, {{"x", img}});
  if (name == "unflatten_spatial") return op([&] { return unflatten_spatial(reshape(a, {2, 4, 3}), 2, 2); }, {{"a", a}});
  if (name == "space_to_depth") return op([&] { return space_to_depth(img, 2); }, {{"x", img}});
  if (name == "split_heads") return op([&] { return split_heads(reshape(a, {2, 2, 6}), 2); }, {{"a", a}});
  if (name == "merge_heads") return op([&] { return merge_heads(a, 2); }, {{"a", a}});
  if (name == "group_mean") return op([&] { return group_mean(a, 2); }, {{"a", a}});
  if (name == "softmax_rows") return op([&] { return softmax_rows(a); }, {{"a", a}});
  if (name == "layer_norm") return op([&] { return layer_norm(a, row, row2); }, {{"a", a}, {"g", row}, {"b", row2}});
  if (name == "conv2d") return op([&] { return conv2d(img, wk, bk, 1, 1); }, {{"x", img}, {"w", wk}, {"b", bk}});
  if (name == "conv2d_stride2") return op([&] { return conv2d(img, wk, bk, 2, 1); }, {{"x", img}, {"w", wk}});
  if (name == "batch_norm2d") {
    BatchNormState<double> st(3);
    return op([&] { return batch_norm2d(img, gam, bet, st, true); }, {{"x", img}, {"g", gam}, {"b", bet}});
  }
  if (name == "batch_norm2d_eval") {
    BatchNormState<double> st(3);
    st.running_mean = rand_t({3}, rng);
    st.running_var = rand_t({3}, rng, 0.5, 2.0);
    return op([&] { return batch_norm2d(img, gam, bet, st, false); }, {{"x", img}, {"g", gam}, {"b", bet}});
  }
  if (name == "bilinear_resize") return op([&] { return bilinear_resize(img, 9, 11); }, {{"x", img}});
  if (name == "bilinear_resize_down") return op([&] { return bilinear_resize(img, 4, 3); }, {{"x", img}});
  if (name == "weighted_bce") return op([&] { return weighted_bce(prob, tgt, wts); }, {{"p", prob}});
  if (name == "soft_iou") return op([&] { return soft_iou(prob, tgt); }, {{"p", prob}});
  throw ConfigError("unknown gradcheck '" + name + "'");
}

SuiteResult check_cmgm(std::uint64_t seed) {
  ParamStore<double> store(seed);
  Cmgm<double> cm(store, {4, 3, 4, 2, 4096});
  SplitMix64 rng(seed + 11);
  auto fr = rand_t({2, 4, 2, 2}, rng);
  auto fs = rand_t({2, 3, 3, 3}, rng);
  // Moves the CAM batch norm output off the ReLU kink.
  for (auto& v : cm.cam_bn.beta.mutable_values()) v = 0.1;
  std::vector<NamedInput> inputs{{"fr", fr}, {"fs", fs}};
  for (const auto& e : store.entries())
    if (e.trainable) inputs.push_back({e.name, e.tensor});
  return run("cmgm", seed, kOpTolerance,
             [&] {
               auto out = cm.graft(fr, fs, true);
               return add(probe(out.z, seed + 1), probe(out.cam, seed + 2));
             },
             inputs);
}

SuiteResult check_agl(std::uint64_t seed) {
  SplitMix64 rng(seed + 23);
  auto g = attn_matrix(binary({1, 1, 3, 3}, rng));
  auto rp = attn_matrix(rand_t({1, 1, 3, 3}, rng, 0.0, 1.0));
  auto sp = attn_matrix(rand_t({1, 1, 3, 3}, rng, 0.0, 1.0));
  auto logits = rand_t({1, 1, 9, 9}, rng);
  return run("agl", seed, kOpTolerance, [&] { return agl(g, sigmoid(logits), rp, sp, 1.0); }, {{"cam", logits}});
}

SuiteResult check_total_loss(std::uint64_t seed) {
  SplitMix64 rng(seed + 37);
  auto mask = binary({2, 1, 4, 4}, rng);
  auto lp = rand_t({2, 1, 4, 4}, rng);
  auto lr = rand_t({2, 1, 2, 2}, rng);
  auto ls = rand_t({2, 1, 2, 2}, rng);
  auto lc = rand_t({2, 1, 4, 4}, rng);
  auto loss = [&](double beta) -> Fn {
    return [&, beta] { return total_loss(sigmoid(lp), sigmoid(lr), sigmoid(ls), sigmoid(lc), mask, beta).total; };
  };
  // RP and SP also reach the loss through the detached AGL weights, which a
  // finite difference would see; beta = 0 removes that path for them.
  auto all = run("total_loss", seed, kOpTolerance, loss(0.0), {{"pred", lp}, {"rp", lr}, {"sp", ls}, {"cam", lc}});
  auto weighted = run("total_loss", seed, kOpTolerance, loss(1.0), {{"pred", lp}, {"cam", lc}});
  auto worst = weighted.max_rel_error >= all.max_rel_error ? weighted : all;
  worst.checked = all.checked + weighted.checked;
  return worst;
}

SuiteResult check_network(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_hw = 32;
  cfg.attn_input_hw = 16;
  cfg.seed = seed;
  GraftNet<double> net(cfg);
  for (auto& v : net.cmgm()->cam_bn.beta.mutable_values()) v = 0.1;
  SplitMix64 rng(seed + 53);
  // A batch of two leaves R5 (1x1 here) with two-value batch norms whose
  // curvature swamps central differences; four keeps them well conditioned.
  auto image = rand_t({4, 3, 32, 32}, rng, 0.0, 1.0);
  std::vector<NamedInput> inputs{{"image", image}};
  for (const auto& e : net.params().entries())
    if (e.trainable) inputs.push_back({e.name, e.tensor});
  GradCheckOptions opts;
  opts.max_elements = 3;
  opts.seed = seed;
  opts.step = 1e-6;
  return run("network", seed, kNetworkTolerance,
             [&] {
               auto out = net.forward(image, true);
               return add(add(probe(out.pred, 1), probe(out.rp, 2)), add(probe(out.sp, 3), probe(out.cam, 4)));
             },
             inputs, opts);
}

}  // namespace

const std::vector<std::string>& gradcheck_names() {
  static const std::vector<std::string> names = {
      "add", "sub", "mul", "scale", "relu", "sigmoid", "abs", "sum", "mean", "matmul", "transpose", "reshape",
      "flatten_spatial", "unflatten_spatial", "space_to_depth", "split_heads", "merge_heads", "group_mean",
      "softmax_rows", "layer_norm", "conv2d", "conv2d_stride2", "batch_norm2d", "batch_norm2d_eval",
      "bilinear_resize", "bilinear_resize_down", "weighted_bce", "soft_iou", "cmgm", "agl", "total_loss", "network"};
  return names;
}

std::vector<SuiteResult> run_gradcheck_suite(const std::vector<std::string>& only,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::function<void(const SuiteResult&)>& on_result) {
  const auto& names = gradcheck_names();
  for (const auto& n : only) {
    if (std::find(names.begin(), names.end(), n) == names.end()) {
      throw ConfigError("unknown gradcheck '" + n + "'");
    }
  }
  std::vector<SuiteResult> out;
  for (const auto& name : names) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    for (auto seed : seeds) {
      SuiteResult r;
      if (name == "cmgm") r = check_cmgm(seed);
      else if (name == "agl") r = check_agl(seed);
      else if (name == "total_loss") r = check_total_loss(seed);
      else if (name == "network") r = check_network(seed);
      else r = check_op(name, seed);
      if (on_result) on_result(r);
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace graftnet
