#pragma once

#include <cstddef>

#include "graftnet/tensor.hpp"

// Differentiable tensor operations. Every op records a backward closure on the
// thread's active tape when at least one operand requires a gradient, and
// rejects non-finite results with NumericError.

namespace graftnet {

// Elementwise. Binary ops broadcast over dims that match exactly or are 1; a
// lower-rank operand is aligned to the trailing dims.
template <Real T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <Real T> Tensor<T> relu(const Tensor<T>& x);
/// Logistic function; saturates to exactly 0/1 outside |x| > 30.
template <Real T> Tensor<T> sigmoid(const Tensor<T>& x);
/// |x|, with derivative 0 at x = 0.
template <Real T> Tensor<T> abs(const Tensor<T>& x);

// Reductions to a rank-0 tensor.
template <Real T> Tensor<T> sum(const Tensor<T>& x);
template <Real T> Tensor<T> mean(const Tensor<T>& x);

/// Matrix product. Supports [m,k]x[k,n], batched [b,m,k]x[b,k,n] and a shared
/// right operand [b,m,k]x[k,n].
template <Real T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Swaps the last two axes.
template <Real T> Tensor<T> transpose(const Tensor<T>& x);
template <Real T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
/// [N,C,H,W] -> [N,H*W,C], positions in row-major (h, w) order.
template <Real T> Tensor<T> flatten_spatial(const Tensor<T>& x);
/// Inverse of flatten_spatial: [N,H*W,C] -> [N,C,H,W].
template <Real T> Tensor<T> unflatten_spatial(const Tensor<T>& x, std::size_t height, std::size_t width);
/// [N,C,H,W] -> [N,C*b*b,H/b,W/b]; output channel (c*b + dy)*b + dx.
template <Real T> Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t block);
/// [N,L,h*d] -> [N*h,L,d].
template <Real T> Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);
/// [N*h,L,d] -> [N,L,h*d].
template <Real T> Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads);
/// Averages consecutive groups along axis 0: [N*g,...] -> [N,...].
template <Real T> Tensor<T> group_mean(const Tensor<T>& x, std::size_t groups);

/// Softmax over the last axis with per-row max subtraction.
template <Real T> Tensor<T> softmax_rows(const Tensor<T>& x);

/// Normalizes over the last axis, then applies gamma/beta (both [C]).
template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

/// Cross-correlation. x [N,C,H,W], weight [O,C,k,k], optional bias [O].
template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);

template <Real T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics and updates the running estimates (unbiased variance); eval mode
/// uses the running estimates.
template <Real T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                       bool training);

/// Bilinear resampling with align_corners = false.
template <Real T> Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

inline constexpr double kProbClamp = 1e-7;

/// -sum(w * [t log p + (1-t) log(1-p)]) / sum(w), p clamped to [1e-7, 1-1e-7].
/// target and weight are constants; an undefined weight means all ones.
template <Real T>
Tensor<T> weighted_bce(const Tensor<T>& prob, const Tensor<T>& target, const Tensor<T>& weight);

/// Mean over the batch (axis 0) of 1 - (sum pg + 1) / (sum(p + g - pg) + 1).
template <Real T> Tensor<T> soft_iou(const Tensor<T>& prob, const Tensor<T>& target);

}  // namespace graftnet
