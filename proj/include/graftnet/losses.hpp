#pragma once

#include <cstddef>

#include "graftnet/ops.hpp"

namespace graftnet {

inline constexpr double kAuxWeight = 1.0 / 8.0;

/// Outer product of a flattened mask with itself: a[x][y] = m[x] * m[y].
///
/// Accepts [H,W] (returns [HW,HW]) or [N,1,H,W] (returns [N,1,HW,HW]). Values
/// must lie in [0,1]. The result is a constant with no gradient.
template <Real T>
Tensor<T> attn_matrix(const Tensor<T>& mask);

/// g log p + (1-g) log(1-p) with p clamped to [1e-7, 1-1e-7]. Not negated.
double bce_pixel(double g, double p);

/// 0.5 (|Ga - RPa| + |Ga - SPa|) + 1, elementwise, constant.
template <Real T>
Tensor<T> agl_omega(const Tensor<T>& g_a, const Tensor<T>& rp_a, const Tensor<T>& sp_a);

/// Attention guided loss: BCE of CAM against Ga, weighted by 1 + beta*omega and
/// normalised by the weight sum. Gradient flows into CAM only.
template <Real T>
Tensor<T> agl(const Tensor<T>& g_a, const Tensor<T>& cam, const Tensor<T>& rp_a, const Tensor<T>& sp_a, double beta);

/// Mean pixel BCE.
template <Real T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target);

/// Smoothed soft IoU, averaged over the batch.
template <Real T>
Tensor<T> iou_loss(const Tensor<T>& prob, const Tensor<T>& target);

/// Area-average [N,1,H,W] down to [N,1,h,w] (integer factors), then binarise
/// at 0.5. A same-size mask is only binarised.
template <Real T>
Tensor<T> downsample_mask(const Tensor<T>& mask, std::size_t h, std::size_t w);

template <Real T>
struct LossBreakdown {
  Tensor<T> total;
  double bce_p = 0.0;
  double iou_p = 0.0;
  double agl = 0.0;
  double aux = 0.0;  // unweighted sum of the auxiliary bce + iou terms
};

/// bce_p + iou_p + agl + aux / 8, as a differentiable scalar.
template <Real T>
Tensor<T> compose_total(const Tensor<T>& bce_p, const Tensor<T>& iou_p, const Tensor<T>& agl_term,
                        const Tensor<T>& aux);

/// Training objective. `rp`, `sp` and `cam` may be undefined; the matching
/// terms are then dropped. With `cam` defined the graft resolution is taken
/// from `rp`, and SP is resized to it before building SPa.
template <Real T>
LossBreakdown<T> total_loss(const Tensor<T>& pred, const Tensor<T>& rp, const Tensor<T>& sp, const Tensor<T>& cam,
                            const Tensor<T>& mask, double beta);

}  // namespace graftnet
