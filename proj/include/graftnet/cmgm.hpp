#pragma once

#include <cstddef>

#include "graftnet/layers.hpp"

namespace graftnet {

struct CmgmConfig {
  std::size_t cnn_channels = 0;   // channels of the CNN feature (queries, values)
  std::size_t attn_channels = 0;  // channels of the transformer feature (keys)
  std::size_t dim = 16;           // common projection width d
  std::size_t heads = 1;
  std::size_t attention_cap = 4096;  // max H'*W' positions
};

template <Real T>
struct CamOutput {
  Tensor<T> z;         // grafted feature [N, d, H', W']
  Tensor<T> attended;  // Y v before the output projection [N, H'W', d]
  Tensor<T> cam;       // cross attention matrix [N, 1, H'W', H'W'], in [0, 1]
  Tensor<T> y;         // row-stochastic attention [N, H'W', H'W'] (head mean)
  Tensor<T> y_sym;     // Y + Y^T
};

/// Cross-model grafting: CNN positions query the (resized) transformer feature.
///
///   q = LN(f_R) Wq,  v = LN(f_R) Wv,  k = LN(resize(f_S)) Wk
///   Y = softmax(q k^T / sqrt(d_head)),  Z = Y v
///   T = unflatten(Z Wo + f_R Ws);  z = ReLU(BN(conv3x3(T))) + T
///   CAM = sigmoid(ReLU(BN(conv1x1(Y + Y^T))))
template <Real T>
class Cmgm {
 public:
  Cmgm(ParamStore<T>& store, const CmgmConfig& config);

  CamOutput<T> graft(const Tensor<T>& f_cnn, const Tensor<T>& f_attn, bool training);
  const CmgmConfig& config() const { return config_; }

  LayerNorm<T> norm_cnn, norm_attn;
  Linear<T> query, key, value, out_proj, shortcut;
  ConvBnRelu<T> fuse;
  Conv<T> cam_conv;
  BatchNorm<T> cam_bn;

 private:
  CmgmConfig config_;
};

/// 1x1 conv to a single channel followed by a sigmoid.
template <Real T>
struct PredictionHead {
  Conv<T> conv;

  PredictionHead() = default;
  PredictionHead(ParamStore<T>& store, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& f) const { return sigmoid(conv(f)); }
};

}  // namespace graftnet
