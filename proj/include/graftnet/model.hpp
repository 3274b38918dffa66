#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "graftnet/cmgm.hpp"
#include "graftnet/decoder.hpp"
#include "graftnet/encoders.hpp"

namespace graftnet {

/// Ablation variants. They share every code path except the switches below.
enum class Variant {
  baseline_cnn,   // CNN encoder + FPN decoder only
  baseline_attn,  // attention encoder + FPN decoder only
  cmgm,           // both branches grafted through CMGM, no attention guided loss
  cmgm_agl,       // cmgm + attention guided loss
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::cmgm_agl;
  std::size_t input_hw = 64;       // CNN branch resolution
  std::size_t attn_input_hw = 16;  // attention branch resolution
  std::size_t patch_size = 4;
  double channel_factor = 0.125;
  std::size_t attn_heads = 1;
  std::size_t attn_depth = 1;
  std::size_t graft_heads = 1;
  std::size_t graft_stage = 2;  // graft pair R5-S<graft_stage>
  std::size_t attention_cap = 4096;
  std::uint64_t seed = 7;

  bool has_cnn() const { return variant != Variant::baseline_attn; }
  bool has_attn() const { return variant != Variant::baseline_cnn; }
  bool has_graft() const { return variant == Variant::cmgm || variant == Variant::cmgm_agl; }
  bool uses_agl() const { return variant == Variant::cmgm_agl; }

  PyramidSpec cnn_spec() const;
  PyramidSpec attn_spec() const;
  std::size_t decoder_width() const;
};

template <Real T>
struct ModelOutput {
  Tensor<T> pred;  // [N,1,H,W] final saliency map
  Tensor<T> rp;    // [N,1,h5,w5] auxiliary head on R5 (CNN variants)
  Tensor<T> sp;    // [N,1,hs,ws] auxiliary head on the decoded S feature (attention variants)
  Tensor<T> cam;   // [N,1,L,L] cross attention matrix (grafting variants)
  Tensor<T> y;     // [N,L,L] row-stochastic cross attention
  Tensor<T> y_sym;
  std::size_t graft_hw = 0;  // side of the grafting grid (R5 resolution)
};

template <Real T>
class GraftNet {
 public:
  explicit GraftNet(const ModelConfig& config);

  /// Both branch inputs given explicitly ([N,3,input_hw,...], [N,3,attn_input_hw,...]).
  ModelOutput<T> forward(const Tensor<T>& image, const Tensor<T>& attn_image, bool training);
  /// Derives the attention-branch input by bilinear resize of `image`.
  ModelOutput<T> forward(const Tensor<T>& image, bool training);

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  Cmgm<T>* cmgm() { return cmgm_ ? &*cmgm_ : nullptr; }

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  std::optional<CnnEncoder<T>> cnn_;
  std::optional<AttnEncoder<T>> attn_;
  std::optional<Cmgm<T>> cmgm_;
  StaggeredDecoder<T> decoder_;
  PredictionHead<T> rp_head_;
  PredictionHead<T> sp_head_;
};

}  // namespace graftnet
