#include "graftnet/cmgm.hpp"

#include <cmath>
#include <string>

namespace graftnet {

template <Real T>
Cmgm<T>::Cmgm(ParamStore<T>& store, const CmgmConfig& config) : config_(config) {
  if (config_.heads == 0 || config_.dim % config_.heads != 0) {
    throw DimensionError("cmgm: dim " + std::to_string(config_.dim) + " not divisible by heads");
  }
  ScopedName<T> scope(store, "cmgm");
  const std::size_t d = config_.dim;
  norm_cnn = LayerNorm<T>(store, "norm_cnn", config_.cnn_channels);
  norm_attn = LayerNorm<T>(store, "norm_attn", config_.attn_channels);
  query = Linear<T>(store, "query", config_.cnn_channels, d);
  key = Linear<T>(store, "key", config_.attn_channels, d);
  value = Linear<T>(store, "value", config_.cnn_channels, d);
  out_proj = Linear<T>(store, "out_proj", d, d);
  shortcut = Linear<T>(store, "shortcut", config_.cnn_channels, d);
  fuse = ConvBnRelu<T>(store, "fuse", d, d, 3, 1);
  cam_conv = Conv<T>(store, "cam_conv", 1, 1, 1, 1, true);
  cam_bn = BatchNorm<T>(store, "cam_bn", 1);
}

template <Real T>
CamOutput<T> Cmgm<T>::graft(const Tensor<T>& f_cnn, const Tensor<T>& f_attn, bool training) {
  if (f_cnn.rank() != 4 || f_attn.rank() != 4 || f_cnn.dim(0) != f_attn.dim(0)) {
    throw DimensionError("cmgm: expected two [N,C,H,W] features, got " + shape_str(f_cnn.shape()) + " and " +
                         shape_str(f_attn.shape()));
  }
  if (f_cnn.dim(1) != config_.cnn_channels || f_attn.dim(1) != config_.attn_channels) {
    throw DimensionError("cmgm: channel mismatch");
  }
  const std::size_t h = f_cnn.dim(2), w = f_cnn.dim(3), positions = h * w;
  if (positions > config_.attention_cap) {
    throw CapacityError("cmgm: " + std::to_string(positions) + " positions exceed the attention cap of " +
                        std::to_string(config_.attention_cap));
  }
  const std::size_t n = f_cnn.dim(0), heads = config_.heads, d = config_.dim;

  auto r = flatten_spatial(f_cnn);
  auto s = flatten_spatial(bilinear_resize(f_attn, h, w));
  auto rn = norm_cnn(r);
  auto q = split_heads(query(rn), heads);
  auto v = split_heads(value(rn), heads);
  auto k = split_heads(key(norm_attn(s)), heads);
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(d / heads));
  auto y_heads = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
  CamOutput<T> out;
  out.attended = merge_heads(matmul(y_heads, v), heads);

  auto t = unflatten_spatial(add(out_proj(out.attended), shortcut(r)), h, w);
  out.z = add(fuse(t, training), t);

  out.y = group_mean(y_heads, heads);
  out.y_sym = add(out.y, transpose(out.y));
  auto logits = cam_bn(cam_conv(reshape(out.y_sym, {n, 1, positions, positions})), training);
  out.cam = sigmoid(relu(logits));
  return out;
}

template <Real T>
PredictionHead<T>::PredictionHead(ParamStore<T>& store, const std::string& name, std::size_t channels) {
  conv = Conv<T>(store, name, channels, 1, 1, 1, true);
}

template class Cmgm<float>;
template class Cmgm<double>;
template struct PredictionHead<float>;
template struct PredictionHead<double>;

}  // namespace graftnet
