#include "graftnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "gemm.hpp"

namespace graftnet {
namespace {

template <Real T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <Real T, typename Fn>
void record(Tensor<T>& out, Fn&& fn) {
  out.set_requires_grad(true);
  active_tape<T>()->record(std::forward<Fn>(fn));
}

template <Real T>
void ensure_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// Strides of an operand viewed in the broadcast output shape (0 on broadcast dims).
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - s.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    strides[i + offset] = s[i] == 1 ? 0 : acc;
    acc *= s[i];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    plan.out[i] = std::max(da, db);
  }
  plan.stride_a = aligned_strides(a, plan.out);
  plan.stride_b = aligned_strides(b, plan.out);
  return plan;
}

// Calls fn(out_index, a_index, b_index) over the broadcast output in row-major order.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t n = shape_numel(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t rank = plan.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * idx[d];
      ib -= plan.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <Real T, typename Forward, typename GradA, typename GradB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Forward f, GradA ga, GradB gb) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  Tensor<T> out(plan.out);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = f(pa[ia], pb[ib]); });
  ensure_finite(out, name);
  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out, plan, ga, gb]() mutable {
      const T* g = out.grad().data();
      const T* va = a.data();
      const T* vb = b.data();
      if (a.requires_grad()) {
        T* da = a.mutable_grad().data();
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          da[ia] += ga(g[i], va[ia], vb[ib]);
        });
      }
      if (b.requires_grad()) {
        T* db = b.mutable_grad().data();
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          db[ib] += gb(g[i], va[ia], vb[ib]);
        });
      }
    });
  }
  return out;
}

template <Real T, typename Forward, typename Derivative>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Forward f, Derivative df) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.mutable_data();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = f(px[i]);
  ensure_finite(out, name);
  if (tracking<T>({&x})) {
    record(out, [x, out, df]() mutable {
      const T* g = out.grad().data();
      const T* vx = x.data();
      const T* vy = out.data();
      T* dx = x.mutable_grad().data();
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += g[i] * df(vx[i], vy[i]);
    });
  }
  return out;
}

template <Real T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

// Copies `out` grad back into `x` grad through an index map out[i] = x[src[i]].
template <Real T>
Tensor<T> gather_op(const Tensor<T>& x, Shape out_shape, std::vector<std::size_t> src, const char* name) {
  Tensor<T> out(std::move(out_shape));
  const T* px = x.data();
  T* po = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) po[i] = px[src[i]];
  (void)name;
  if (tracking<T>({&x})) {
    record(out, [x, out, src = std::move(src)]() mutable {
      const T* g = out.grad().data();
      T* dx = x.mutable_grad().data();
      for (std::size_t i = 0; i < src.size(); ++i) dx[src[i]] += g[i];
    });
  }
  return out;
}

}  // namespace

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <Real T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary_op(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op(
      x, "relu", [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <Real T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op(
      x, "sigmoid",
      [](T v) {
        if (v > T{30}) return T{1};
        if (v < T{-30}) return T{0};
        return T{1} / (T{1} + std::exp(-v));
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <Real T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary_op(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <Real T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  ensure_finite(out, "sum");
  if (tracking<T>({&x})) {
    record(out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (T& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

template <Real T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  const double n = static_cast<double>(x.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
  ensure_finite(out, "mean");
  if (tracking<T>({&x})) {
    record(out, [x, out]() mutable {
      const T g = out.grad()[0] / static_cast<T>(x.numel());
      for (T& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  const bool shared_b = batched && b.rank() == 2;
  if (!((a.rank() == 2 && b.rank() == 2) || (batched && (b.rank() == 3 || shared_b)))) {
    throw DimensionError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  if (k != kb || (batched && !shared_b && b.dim(0) != batch)) {
    throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  const std::size_t b_step = shared_b ? 0 : k * n;
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm(false, false, m, n, k, a.data() + s * m * k, b.data() + s * b_step, out.mutable_data() + s * m * n,
                 false);
  }
  ensure_finite(out, "matmul");
  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out, batch, m, n, k, b_step]() mutable {
      const T* g = out.grad().data();
      for (std::size_t s = 0; s < batch; ++s) {
        const T* gs = g + s * m * n;
        if (a.requires_grad()) {
          detail::gemm(false, true, m, k, n, gs, b.data() + s * b_step, a.mutable_grad().data() + s * m * k, true);
        }
        if (b.requires_grad()) {
          detail::gemm(true, false, k, n, m, a.data() + s * m * k, gs, b.mutable_grad().data() + s * b_step, true);
        }
      }
    });
  }
  return out;
}

template <Real T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank must be >= 2, got " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t rows = shape[shape.size() - 2];
  const std::size_t cols = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const std::size_t mats = x.numel() / (rows * cols);
  std::vector<std::size_t> src(x.numel());
  for (std::size_t b = 0; b < mats; ++b)
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t i = 0; i < rows; ++i) src[b * rows * cols + j * rows + i] = b * rows * cols + i * cols + j;
  return gather_op(x, std::move(shape), std::move(src), "transpose");
}

template <Real T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(shape, std::vector<T>(x.values().begin(), x.values().end()));
  if (tracking<T>({&x})) {
    record(out, [x, out]() mutable {
      auto g = out.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
  }
  return out;
}

template <Real T>
Tensor<T> flatten_spatial(const Tensor<T>& x) {
  require_rank(x, 4, "flatten_spatial");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<std::size_t> src(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) src[(b * hw + p) * c + ch] = (b * c + ch) * hw + p;
  return gather_op(x, Shape{n, hw, c}, std::move(src), "flatten_spatial");
}

template <Real T>
Tensor<T> unflatten_spatial(const Tensor<T>& x, std::size_t height, std::size_t width) {
  require_rank(x, 3, "unflatten_spatial");
  const std::size_t n = x.dim(0), hw = x.dim(1), c = x.dim(2);
  if (hw != height * width) {
    throw DimensionError("unflatten_spatial: " + std::to_string(hw) + " positions cannot form " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<std::size_t> src(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) src[(b * c + ch) * hw + p] = (b * hw + p) * c + ch;
  return gather_op(x, Shape{n, c, height, width}, std::move(src), "unflatten_spatial");
}

template <Real T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t block) {
  require_rank(x, 4, "space_to_depth");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (block == 0 || h % block != 0 || w % block != 0) {
    throw DimensionError("space_to_depth: " + shape_str(x.shape()) + " not divisible by block " +
                         std::to_string(block));
  }
  const std::size_t oh = h / block, ow = w / block, oc = c * block * block;
  std::vector<std::size_t> src(x.numel());
  std::size_t i = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t dy = 0; dy < block; ++dy)
        for (std::size_t dx = 0; dx < block; ++dx)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) src[i++] = ((b * c + ch) * h + y * block + dy) * w + xx * block + dx;
  return gather_op(x, Shape{n, oc, oh, ow}, std::move(src), "space_to_depth");
}

template <Real T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  require_rank(x, 3, "split_heads");
  const std::size_t n = x.dim(0), l = x.dim(1), c = x.dim(2);
  if (heads == 0 || c % heads != 0) throw DimensionError("split_heads: channels not divisible by head count");
  const std::size_t d = c / heads;
  std::vector<std::size_t> src(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t hh = 0; hh < heads; ++hh)
      for (std::size_t p = 0; p < l; ++p)
        for (std::size_t k = 0; k < d; ++k) src[((b * heads + hh) * l + p) * d + k] = (b * l + p) * c + hh * d + k;
  return gather_op(x, Shape{n * heads, l, d}, std::move(src), "split_heads");
}

template <Real T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (heads == 0 || x.dim(0) % heads != 0) throw DimensionError("merge_heads: batch not divisible by head count");
  const std::size_t n = x.dim(0) / heads, l = x.dim(1), d = x.dim(2), c = d * heads;
  std::vector<std::size_t> src(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < l; ++p)
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t k = 0; k < d; ++k) src[(b * l + p) * c + hh * d + k] = ((b * heads + hh) * l + p) * d + k;
  return gather_op(x, Shape{n, l, c}, std::move(src), "merge_heads");
}

template <Real T>
Tensor<T> group_mean(const Tensor<T>& x, std::size_t groups) {
  if (x.rank() == 0 || groups == 0 || x.dim(0) % groups != 0) {
    throw DimensionError("group_mean: leading dim of " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(groups));
  }
  if (groups == 1) return x;
  Shape shape = x.shape();
  shape[0] /= groups;
  const std::size_t inner = x.numel() / x.dim(0);
  Tensor<T> out(shape);
  const T* px = x.data();
  T* po = out.mutable_data();
  const T inv = T{1} / static_cast<T>(groups);
  for (std::size_t b = 0; b < shape[0]; ++b)
    for (std::size_t i = 0; i < inner; ++i) {
      T acc{0};
      for (std::size_t g = 0; g < groups; ++g) acc += px[(b * groups + g) * inner + i];
      po[b * inner + i] = acc * inv;
    }
  if (tracking<T>({&x})) {
    record(out, [x, out, groups, inner, inv]() mutable {
      const T* g = out.grad().data();
      T* dx = x.mutable_grad().data();
      const std::size_t outer = out.numel() / inner;
      for (std::size_t b = 0; b < outer; ++b)
        for (std::size_t gi = 0; gi < groups; ++gi)
          for (std::size_t i = 0; i < inner; ++i) dx[(b * groups + gi) * inner + i] += g[b * inner + i] * inv;
    });
  }
  return out;
}

template <Real T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("softmax_rows: scalar input");
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / cols;
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * cols;
    T* yr = po + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T total{0};
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= total;
  }
  ensure_finite(out, "softmax_rows");
  if (tracking<T>({&x})) {
    record(out, [x, out, rows, cols]() mutable {
      const T* g = out.grad().data();
      const T* y = out.data();
      T* dx = x.mutable_grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot{0};
        for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
      }
    });
  }
  return out;
}

template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.numel() != c || beta.numel() != c) throw DimensionError("layer_norm: gamma/beta size mismatch");
  const std::size_t rows = x.numel() / c;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * c;
    T mu{0};
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(c);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (xr[j] - mu) * inv_std[r];
      po[r * c + j] = pg[j] * xhat[r * c + j] + pb[j];
    }
  }
  ensure_finite(out, "layer_norm");
  if (tracking<T>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, c]() mutable {
      const T* g = out.grad().data();
      const T* pg = gamma.data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            if (gamma.requires_grad()) gamma.mutable_grad()[j] += g[r * c + j] * xhat[r * c + j];
            if (beta.requires_grad()) beta.mutable_grad()[j] += g[r * c + j];
          }
      }
      if (x.requires_grad()) {
        T* dx = x.mutable_grad().data();
        const T inv_c = T{1} / static_cast<T>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_d{0}, sum_dx{0};
          for (std::size_t j = 0; j < c; ++j) {
            const T d = g[r * c + j] * pg[j];
            sum_d += d;
            sum_dx += d * xhat[r * c + j];
          }
          for (std::size_t j = 0; j < c; ++j) {
            const T d = g[r * c + j] * pg[j];
            dx[r * c + j] += inv_std[r] * (d - inv_c * sum_d - xhat[r * c + j] * inv_c * sum_dx);
          }
        }
      }
    });
  }
  return out;
}

namespace {

// [C*k*k, oh*ow] patch matrix of one image.
template <Real T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ch * k + ky) * k + kx) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w);
            row[y * ow + x] = inside ? img[(ch * h + iy) * w + ix] : T{0};
          }
        }
      }
}

template <Real T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* img) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ch * k + ky) * k + kx) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            img[(ch * h + iy) * w + ix] += row[y * ow + x];
          }
        }
      }
}

}  // namespace

template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " does not fit input " +
                         shape_str(x.shape()));
  }
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (k > h + 2 * pad || k > w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != o) throw DimensionError("conv2d: bias size mismatch");
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (w + 2 * pad - k) / stride + 1;
  const std::size_t ckk = c * k * k, ohw = oh * ow;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  Tensor<T> out(Shape{n, o, oh, ow});
  std::vector<T> col(pointwise ? 0 : ckk * ohw);
  for (std::size_t b = 0; b < n; ++b) {
    const T* img = x.data() + b * c * h * w;
    const T* patches = img;
    if (!pointwise) {
      im2col(img, c, h, w, k, stride, pad, oh, ow, col.data());
      patches = col.data();
    }
    T* ob = out.mutable_data() + b * o * ohw;
    detail::gemm(false, false, o, ohw, ckk, weight.data(), patches, ob, false);
    if (bias.defined()) {
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t p = 0; p < ohw; ++p) ob[oc * ohw + p] += bias[oc];
    }
  }
  ensure_finite(out, "conv2d");
  if (tracking<T>({&x, &weight, &bias})) {
    record(out, [x, weight, bias, out, n, c, h, w, o, k, stride, pad, oh, ow, ckk, ohw, pointwise]() mutable {
      std::vector<T> col(pointwise ? 0 : ckk * ohw);
      std::vector<T> dcol(pointwise ? 0 : ckk * ohw);
      for (std::size_t b = 0; b < n; ++b) {
        const T* g = out.grad().data() + b * o * ohw;
        const T* img = x.data() + b * c * h * w;
        if (weight.requires_grad()) {
          const T* patches = img;
          if (!pointwise) {
            im2col(img, c, h, w, k, stride, pad, oh, ow, col.data());
            patches = col.data();
          }
          detail::gemm(false, true, o, ckk, ohw, g, patches, weight.mutable_grad().data(), true);
        }
        if (bias.defined() && bias.requires_grad()) {
          for (std::size_t oc = 0; oc < o; ++oc) {
            T acc{0};
            for (std::size_t p = 0; p < ohw; ++p) acc += g[oc * ohw + p];
            bias.mutable_grad()[oc] += acc;
          }
        }
        if (x.requires_grad()) {
          T* dimg = x.mutable_grad().data() + b * c * h * w;
          if (pointwise) {
            detail::gemm(true, false, ckk, ohw, o, weight.data(), g, dimg, true);
          } else {
            detail::gemm(true, false, ckk, ohw, o, weight.data(), g, dcol.data(), false);
            col2im(dcol.data(), c, h, w, k, stride, pad, oh, ow, dimg);
          }
        }
      }
    });
  }
  return out;
}

template <Real T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                       bool training) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c) {
    throw DimensionError("batch_norm2d: parameter size mismatch for " + shape_str(x.shape()));
  }
  const std::size_t count = n * hw;
  if (training && count < 2) {
    throw DegenerateBatchError("batch_norm2d: batch statistics need N*H*W >= 2, got " + shape_str(x.shape()));
  }
  std::vector<T> mu(c), inv_std(c);
  const T* px = x.data();
  if (training) {
    T* rm = state.running_mean.mutable_data();
    T* rv = state.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p) s += px[(b * c + ch) * hw + p];
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
          const double d = px[(b * c + ch) * hw + p] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      mu[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(state.eps)));
      const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
      rm[ch] = static_cast<T>((1.0 - state.momentum) * rm[ch] + state.momentum * m);
      rv[ch] = static_cast<T>((1.0 - state.momentum) * rv[ch] + state.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  T* po = out.mutable_data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (b * c + ch) * hw + p;
        xhat[i] = (px[i] - mu[ch]) * inv_std[ch];
        po[i] = gamma[ch] * xhat[i] + beta[ch];
      }
  ensure_finite(out, "batch_norm2d");
  if (tracking<T>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, count,
                 training]() mutable {
      const T* g = out.grad().data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_g{0}, sum_gx{0};
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t p = 0; p < hw; ++p) {
            const std::size_t i = (b * c + ch) * hw + p;
            sum_g += g[i];
            sum_gx += g[i] * xhat[i];
          }
        if (gamma.requires_grad()) gamma.mutable_grad()[ch] += sum_gx;
        if (beta.requires_grad()) beta.mutable_grad()[ch] += sum_g;
        if (!x.requires_grad()) continue;
        T* dx = x.mutable_grad().data();
        const T scale_ch = gamma[ch] * inv_std[ch];
        const T inv_count = T{1} / static_cast<T>(count);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t p = 0; p < hw; ++p) {
            const std::size_t i = (b * c + ch) * hw + p;
            if (training) {
              dx[i] += scale_ch * (g[i] - inv_count * sum_g - xhat[i] * inv_count * sum_gx);
            } else {
              dx[i] += scale_ch * g[i];
            }
          }
      }
    });
  }
  return out;
}

namespace {

struct AxisTap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<AxisTap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<AxisTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    const double src = std::max(scale * (static_cast<double>(d) + 0.5) - 0.5, 0.0);
    const std::size_t i0 = std::min(static_cast<std::size_t>(src), in - 1);
    const std::size_t i1 = i0 + 1 < in ? i0 + 1 : i0;
    const double lambda = i1 == i0 ? 0.0 : src - static_cast<double>(i0);
    taps[d] = {i0, i1, 1.0 - lambda, lambda};
  }
  return taps;
}

}  // namespace

template <Real T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: output size must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == out_h && w == out_w) {
    return reshape(x, x.shape());
  }
  auto ty = resize_taps(h, out_h);
  auto tx = resize_taps(w, out_w);
  Tensor<T> out(Shape{n, c, out_h, out_w});
  const T* px = x.data();
  T* po = out.mutable_data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = px + plane * h * w;
    T* dst = po + plane * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const auto& b = tx[xx];
        const double v = a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                         a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
        dst[y * out_w + xx] = static_cast<T>(v);
      }
    }
  }
  ensure_finite(out, "bilinear_resize");
  if (tracking<T>({&x})) {
    record(out, [x, out, ty = std::move(ty), tx = std::move(tx), n, c, h, w, out_h, out_w]() mutable {
      const T* g = out.grad().data();
      T* dx = x.mutable_grad().data();
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        const T* gp = g + plane * out_h * out_w;
        T* dp = dx + plane * h * w;
        for (std::size_t y = 0; y < out_h; ++y) {
          const auto& a = ty[y];
          for (std::size_t xx = 0; xx < out_w; ++xx) {
            const auto& b = tx[xx];
            const double gv = gp[y * out_w + xx];
            dp[a.i0 * w + b.i0] += static_cast<T>(gv * a.w0 * b.w0);
            dp[a.i0 * w + b.i1] += static_cast<T>(gv * a.w0 * b.w1);
            dp[a.i1 * w + b.i0] += static_cast<T>(gv * a.w1 * b.w0);
            dp[a.i1 * w + b.i1] += static_cast<T>(gv * a.w1 * b.w1);
          }
        }
      }
    });
  }
  return out;
}

template <Real T>
Tensor<T> weighted_bce(const Tensor<T>& prob, const Tensor<T>& target, const Tensor<T>& weight) {
  if (prob.shape() != target.shape() || (weight.defined() && weight.shape() != prob.shape())) {
    throw DimensionError("weighted_bce: shape mismatch " + shape_str(prob.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < prob.numel(); ++i) {
    const double p = std::clamp(static_cast<double>(prob[i]), lo, hi);
    const double t = target[i];
    const double wi = weight.defined() ? static_cast<double>(weight[i]) : 1.0;
    num += wi * (t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    den += wi;
  }
  if (den <= 0.0) throw DomainError("weighted_bce: weights must have a positive sum");
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(-num / den));
  ensure_finite(out, "weighted_bce");
  if (tracking<T>({&prob})) {
    record(out, [prob, target, weight, out, den, lo, hi]() mutable {
      const double g = out.grad()[0];
      T* dp = prob.mutable_grad().data();
      for (std::size_t i = 0; i < prob.numel(); ++i) {
        const double p = prob[i];
        if (p < lo || p > hi) continue;
        const double t = target[i];
        const double wi = weight.defined() ? static_cast<double>(weight[i]) : 1.0;
        dp[i] += static_cast<T>(-g * wi * (t / p - (1.0 - t) / (1.0 - p)) / den);
      }
    });
  }
  return out;
}

template <Real T>
Tensor<T> soft_iou(const Tensor<T>& prob, const Tensor<T>& target) {
  if (prob.shape() != target.shape() || prob.rank() == 0) {
    throw DimensionError("soft_iou: shape mismatch " + shape_str(prob.shape()) + " vs " + shape_str(target.shape()));
  }
  const std::size_t batch = prob.dim(0);
  const std::size_t per = prob.numel() / batch;
  std::vector<double> inter(batch, 0.0), uni(batch, 0.0);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double p = prob[i], g = target[i];
      inter[b] += p * g;
      uni[b] += p + g - p * g;
    }
    loss += 1.0 - (inter[b] + 1.0) / (uni[b] + 1.0);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(batch)));
  ensure_finite(out, "soft_iou");
  if (tracking<T>({&prob})) {
    record(out, [prob, target, out, batch, per, inter = std::move(inter), uni = std::move(uni)]() mutable {
      const double g = out.grad()[0] / static_cast<double>(batch);
      T* dp = prob.mutable_grad().data();
      for (std::size_t b = 0; b < batch; ++b) {
        const double i1 = inter[b] + 1.0, u1 = uni[b] + 1.0;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
          const double t = target[i];
          dp[i] += static_cast<T>(-g * (t * u1 - i1 * (1.0 - t)) / (u1 * u1));
        }
      }
    });
  }
  return out;
}

#define GRAFTNET_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                \
  template Tensor<T> abs(const Tensor<T>&);                                                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> transpose(const Tensor<T>&);                                                              \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                                  \
  template Tensor<T> flatten_spatial(const Tensor<T>&);                                                        \
  template Tensor<T> unflatten_spatial(const Tensor<T>&, std::size_t, std::size_t);                            \
  template Tensor<T> space_to_depth(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                                               \
  template Tensor<T> merge_heads(const Tensor<T>&, std::size_t);                                               \
  template Tensor<T> group_mean(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);    \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&,     \
                                  bool);                                                                       \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);                              \
  template Tensor<T> weighted_bce(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> soft_iou(const Tensor<T>&, const Tensor<T>&);

GRAFTNET_INSTANTIATE_OPS(float)
GRAFTNET_INSTANTIATE_OPS(double)

}  // namespace graftnet
