#pragma once

#include <cstddef>
#include <vector>

#include "graftnet/cmgm.hpp"
#include "graftnet/encoders.hpp"

namespace graftnet {

/// Decoder block with n fused inputs: a 3x3 conv-BN-ReLU adapter per input,
/// bilinear resize to the largest input, elementwise sum, one more 3x3
/// conv-BN-ReLU.
template <Real T>
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(ParamStore<T>& store, const std::string& name, const std::vector<std::size_t>& in_channels,
               std::size_t out_channels);

  Tensor<T> operator()(const std::vector<Tensor<T>>& inputs, bool training);
  std::size_t arity() const { return adapters_.size(); }

 private:
  std::vector<ConvBnRelu<T>> adapters_;
  ConvBnRelu<T> fuse_;
};

struct DecoderConfig {
  std::size_t width = 8;
  std::vector<std::size_t> cnn_channels;   // R2..R5, empty without a CNN branch
  std::vector<std::size_t> attn_channels;  // S1..S4, empty without an attention branch
  std::size_t graft_stage = 2;             // S level decoded to and grafted onto R5
  bool grafted_input = true;               // decode_grafted fuses Z with R5
};

/// Three decode sub-stages: transformer FPN (S4 -> S_graft), grafted feature
/// (Z with R5), then CNN FPN (R5 -> R2) and the output head.
template <Real T>
class StaggeredDecoder {
 public:
  StaggeredDecoder() = default;
  StaggeredDecoder(ParamStore<T>& store, const DecoderConfig& config);

  /// Top-down over S_last .. S_graft; output at S_graft resolution.
  Tensor<T> decode_attn(const FeaturePyramid<T>& pyramid, bool training);
  /// z may be undefined when the grafting path is absent.
  Tensor<T> decode_grafted(const Tensor<T>& z, const Tensor<T>& r5, bool training);
  /// Fuses R4, R3, R2 top-down, applies the head and upsamples to out_hw.
  Tensor<T> decode_cnn(const Tensor<T>& grafted, const FeaturePyramid<T>& pyramid, std::size_t out_hw,
                       bool training);

  const DecoderConfig& config() const { return config_; }

 private:
  DecoderConfig config_;
  std::vector<DecoderBlock<T>> attn_blocks_;  // S_last first
  DecoderBlock<T> graft_block_;
  std::vector<DecoderBlock<T>> cnn_blocks_;  // R4 first
  PredictionHead<T> head_;
};

}  // namespace graftnet
