#include "graftnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace graftnet {

namespace {

template <Real T>
Tensor<T> detached(const Tensor<T>& x) {
  return Tensor<T>(x.shape(), std::vector<T>(x.values().begin(), x.values().end()));
}

template <Real T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

template <Real T>
Tensor<T> attn_matrix(const Tensor<T>& mask) {
  std::size_t n = 1, l = 0;
  Shape out_shape;
  if (mask.rank() == 2) {
    l = mask.numel();
    out_shape = {l, l};
  } else if (mask.rank() == 4 && mask.dim(1) == 1) {
    n = mask.dim(0);
    l = mask.dim(2) * mask.dim(3);
    out_shape = {n, 1, l, l};
  } else {
    throw DimensionError("attn_matrix: expected [H,W] or [N,1,H,W], got " + shape_str(mask.shape()));
  }
  for (T v : mask.values()) {
    if (!(v >= T{0} && v <= T{1})) throw DomainError("attn_matrix: mask values must lie in [0,1]");
  }
  Tensor<T> out(out_shape);
  auto o = out.mutable_values();
  for (std::size_t b = 0; b < n; ++b) {
    const T* m = mask.data() + b * l;
    T* a = o.data() + b * l * l;
    for (std::size_t x = 0; x < l; ++x)
      for (std::size_t y = 0; y < l; ++y) a[x * l + y] = m[x] * m[y];
  }
  return out;
}

double bce_pixel(double g, double p) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
}

template <Real T>
Tensor<T> agl_omega(const Tensor<T>& g_a, const Tensor<T>& rp_a, const Tensor<T>& sp_a) {
  require_same(g_a, rp_a, "agl_omega");
  require_same(g_a, sp_a, "agl_omega");
  Tensor<T> out(g_a.shape());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = T(0.5) * (std::abs(g_a[i] - rp_a[i]) + std::abs(g_a[i] - sp_a[i])) + T{1};
  }
  return out;
}

template <Real T>
Tensor<T> agl(const Tensor<T>& g_a, const Tensor<T>& cam, const Tensor<T>& rp_a, const Tensor<T>& sp_a,
              double beta) {
  require_same(g_a, cam, "agl");
  auto weight = agl_omega(g_a, rp_a, sp_a);
  for (auto& w : weight.mutable_values()) w = static_cast<T>(1.0 + beta * w);
  return weighted_bce(cam, g_a, weight);
}

template <Real T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target) {
  return weighted_bce(prob, target, Tensor<T>());
}

template <Real T>
Tensor<T> iou_loss(const Tensor<T>& prob, const Tensor<T>& target) {
  return soft_iou(prob, target);
}

template <Real T>
Tensor<T> downsample_mask(const Tensor<T>& mask, std::size_t h, std::size_t w) {
  if (mask.rank() != 4 || mask.dim(1) != 1) {
    throw DimensionError("downsample_mask: expected [N,1,H,W], got " + shape_str(mask.shape()));
  }
  const std::size_t n = mask.dim(0), sh = mask.dim(2), sw = mask.dim(3);
  if (h == 0 || w == 0 || sh % h != 0 || sw % w != 0) {
    throw DimensionError("downsample_mask: " + std::to_string(sh) + "x" + std::to_string(sw) +
                         " is not an integer multiple of " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t fy = sh / h, fx = sw / w;
  Tensor<T> out(Shape{n, 1, h, w});
  auto o = out.mutable_values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < fy; ++dy)
          for (std::size_t dx = 0; dx < fx; ++dx) acc += mask[(b * sh + y * fy + dy) * sw + x * fx + dx];
        o[(b * h + y) * w + x] = acc / double(fy * fx) >= 0.5 ? T{1} : T{0};
      }
  return out;
}

template <Real T>
Tensor<T> compose_total(const Tensor<T>& bce_p, const Tensor<T>& iou_p, const Tensor<T>& agl_term,
                        const Tensor<T>& aux) {
  return add(add(bce_p, iou_p), add(agl_term, scale(aux, static_cast<T>(kAuxWeight))));
}

template <Real T>
LossBreakdown<T> total_loss(const Tensor<T>& pred, const Tensor<T>& rp, const Tensor<T>& sp, const Tensor<T>& cam,
                            const Tensor<T>& mask, double beta) {
  require_same(pred, mask, "total_loss");
  LossBreakdown<T> out;
  auto bce_p = bce_loss(pred, mask);
  auto iou_p = iou_loss(pred, mask);
  Tensor<T> aux = Tensor<T>::scalar(T{0});
  for (const auto* head : {&rp, &sp}) {
    if (!head->defined()) continue;
    auto g = downsample_mask(mask, head->dim(2), head->dim(3));
    aux = add(aux, add(bce_loss(*head, g), iou_loss(*head, g)));
  }
  Tensor<T> agl_term = Tensor<T>::scalar(T{0});
  if (cam.defined()) {
    if (!rp.defined() || !sp.defined()) throw DimensionError("total_loss: the attention guided loss needs RP and SP");
    const std::size_t h = rp.dim(2), w = rp.dim(3);
    const std::size_t l = h * w;
    if (cam.rank() != 4 || cam.dim(1) != 1 || cam.dim(2) != l || cam.dim(3) != l) {
      throw DimensionError("total_loss: CAM " + shape_str(cam.shape()) + " does not match the " + std::to_string(h) +
                           "x" + std::to_string(w) + " graft grid");
    }
    auto g_a = attn_matrix(downsample_mask(mask, h, w));
    auto rp_a = attn_matrix(detached(rp));
    auto sp_a = attn_matrix(bilinear_resize(detached(sp), h, w));
    agl_term = agl(g_a, cam, rp_a, sp_a, beta);
  }
  out.total = compose_total(bce_p, iou_p, agl_term, aux);
  out.bce_p = bce_p.item();
  out.iou_p = iou_p.item();
  out.agl = agl_term.item();
  out.aux = aux.item();
  return out;
}

#define GRAFTNET_INSTANTIATE_LOSSES(T)                                                                          \
  template Tensor<T> attn_matrix(const Tensor<T>&);                                                            \
  template Tensor<T> agl_omega(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> agl(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);      \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> iou_loss(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> downsample_mask(const Tensor<T>&, std::size_t, std::size_t);                              \
  template Tensor<T> compose_total(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template LossBreakdown<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                       const Tensor<T>&, double);

GRAFTNET_INSTANTIATE_LOSSES(float)
GRAFTNET_INSTANTIATE_LOSSES(double)

}  // namespace graftnet
