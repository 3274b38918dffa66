#include "graftnet/decoder.hpp"

#include <string>

namespace graftnet {

template <Real T>
DecoderBlock<T>::DecoderBlock(ParamStore<T>& store, const std::string& name,
                              const std::vector<std::size_t>& in_channels, std::size_t out_channels) {
  ScopedName<T> scope(store, name);
  for (std::size_t i = 0; i < in_channels.size(); ++i) {
    adapters_.emplace_back(store, "adapter" + std::to_string(i), in_channels[i], out_channels, 3, 1);
  }
  fuse_ = ConvBnRelu<T>(store, "fuse", out_channels, out_channels, 3, 1);
}

template <Real T>
Tensor<T> DecoderBlock<T>::operator()(const std::vector<Tensor<T>>& inputs, bool training) {
  if (inputs.size() != adapters_.size()) {
    throw DimensionError("decoder block expects " + std::to_string(adapters_.size()) + " inputs, got " +
                         std::to_string(inputs.size()));
  }
  std::size_t h = 0, w = 0;
  for (const auto& x : inputs) {
    if (x.dim(2) * x.dim(3) > h * w) {
      h = x.dim(2);
      w = x.dim(3);
    }
  }
  Tensor<T> fused;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto a = bilinear_resize(adapters_[i](inputs[i], training), h, w);
    fused = fused.defined() ? add(fused, a) : a;
  }
  return fuse_(fused, training);
}

template <Real T>
StaggeredDecoder<T>::StaggeredDecoder(ParamStore<T>& store, const DecoderConfig& config) : config_(config) {
  ScopedName<T> scope(store, "decoder");
  const std::size_t d = config_.width;
  if (!config_.attn_channels.empty()) {
    const std::size_t last = config_.attn_channels.size();
    if (config_.graft_stage < 1 || config_.graft_stage > last) {
      throw ConfigError("graft stage S" + std::to_string(config_.graft_stage) + " does not exist");
    }
    for (std::size_t s = last; s >= config_.graft_stage; --s) {
      std::vector<std::size_t> in{config_.attn_channels[s - 1]};
      if (s != last) in.push_back(d);
      attn_blocks_.emplace_back(store, "attn_db_s" + std::to_string(s), in, d);
    }
  }
  if (!config_.cnn_channels.empty()) {
    if (config_.cnn_channels.size() != 4) throw ConfigError("cnn decoder needs R2..R5 channel counts");
    std::vector<std::size_t> in;
    if (config_.grafted_input) in.push_back(d);
    in.push_back(config_.cnn_channels[3]);
    graft_block_ = DecoderBlock<T>(store, "graft_db", in, d);
    for (std::size_t r = 4; r >= 2; --r) {
      cnn_blocks_.emplace_back(store, "cnn_db_r" + std::to_string(r),
                               std::vector<std::size_t>{config_.cnn_channels[r - 2], d}, d);
    }
    head_ = PredictionHead<T>(store, "head", d);
  }
}

template <Real T>
Tensor<T> StaggeredDecoder<T>::decode_attn(const FeaturePyramid<T>& pyramid, bool training) {
  const std::size_t last = config_.attn_channels.size();
  Tensor<T> x;
  std::size_t i = 0;
  for (std::size_t s = last; s >= config_.graft_stage; --s, ++i) {
    std::vector<Tensor<T>> in{pyramid.at(s)};
    if (x.defined()) in.push_back(x);
    x = attn_blocks_[i](in, training);
  }
  return x;
}

template <Real T>
Tensor<T> StaggeredDecoder<T>::decode_grafted(const Tensor<T>& z, const Tensor<T>& r5, bool training) {
  if (config_.grafted_input) {
    if (!z.defined()) throw DimensionError("decode_grafted: grafted feature missing");
    if (z.dim(2) != r5.dim(2) || z.dim(3) != r5.dim(3)) {
      throw DimensionError("decode_grafted: Z " + shape_str(z.shape()) + " and R5 " + shape_str(r5.shape()) +
                           " differ spatially");
    }
    return graft_block_({z, r5}, training);
  }
  return graft_block_({r5}, training);
}

template <Real T>
Tensor<T> StaggeredDecoder<T>::decode_cnn(const Tensor<T>& grafted, const FeaturePyramid<T>& pyramid,
                                          std::size_t out_hw, bool training) {
  Tensor<T> x = grafted;
  std::size_t i = 0;
  for (std::size_t r = 4; r >= 2; --r, ++i) x = cnn_blocks_[i]({pyramid.at(r), x}, training);
  return bilinear_resize(head_(x), out_hw, out_hw);
}

template class DecoderBlock<float>;
template class DecoderBlock<double>;
template class StaggeredDecoder<float>;
template class StaggeredDecoder<double>;

}  // namespace graftnet
