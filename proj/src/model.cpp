#include "graftnet/model.hpp"

namespace graftnet {

namespace {
// Nominal widths before toy scaling: CNN base 32 gives ResNet-18's 64..512
// ladder for R2..R5, attention base 64 gives 128..512 for S1..S3.
constexpr std::size_t kCnnBase = 32;
constexpr std::size_t kAttnBase = 64;
constexpr std::size_t kDecoderWidth = 64;
}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline_cnn:
      return "baseline_cnn";
    case Variant::baseline_attn:
      return "baseline_attn";
    case Variant::cmgm:
      return "cmgm";
    case Variant::cmgm_agl:
      return "cmgm_agl";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "baseline_cnn") return Variant::baseline_cnn;
  if (s == "baseline_attn") return Variant::baseline_attn;
  if (s == "cmgm") return Variant::cmgm;
  if (s == "cmgm_agl") return Variant::cmgm_agl;
  throw ConfigError("unknown model variant '" + s + "'");
}

PyramidSpec ModelConfig::cnn_spec() const {
  return {input_hw, scaled_channels(kCnnBase, channel_factor), 5, Branch::cnn, 0};
}

PyramidSpec ModelConfig::attn_spec() const {
  return {attn_input_hw, scaled_channels(kAttnBase, channel_factor), 4, Branch::attn, patch_size};
}

std::size_t ModelConfig::decoder_width() const {
  std::size_t w = scaled_channels(kDecoderWidth, channel_factor);
  // The grafting projection is split across heads.
  while (w % graft_heads != 0) ++w;
  return w;
}

template <Real T>
GraftNet<T>::GraftNet(const ModelConfig& config) : config_(config), store_(config.seed) {
  if (config_.graft_stage < 1 || config_.graft_stage > 4) {
    throw ConfigError("graft pair must be one of R5-S1..R5-S4");
  }
  const std::size_t d = config_.decoder_width();
  DecoderConfig dc;
  dc.width = d;
  dc.graft_stage = config_.graft_stage;
  dc.grafted_input = config_.has_graft();

  if (config_.has_cnn()) {
    const auto spec = config_.cnn_spec();
    cnn_.emplace(store_, spec);
    for (std::size_t s = 2; s <= 5; ++s) dc.cnn_channels.push_back(spec.channels(s));
  }
  if (config_.has_attn()) {
    const auto spec = config_.attn_spec();
    store_.set_group(ParamGroup::attn_backbone);
    attn_.emplace(store_, spec, config_.attn_heads, config_.attn_depth);
    store_.set_group(ParamGroup::other);
    for (std::size_t s = 1; s <= 4; ++s) dc.attn_channels.push_back(spec.channels(s));
  }
  if (config_.has_graft()) {
    CmgmConfig cc;
    cc.cnn_channels = dc.cnn_channels.back();
    cc.attn_channels = d;
    cc.dim = d;
    cc.heads = config_.graft_heads;
    cc.attention_cap = config_.attention_cap;
    cmgm_.emplace(store_, cc);
  }
  decoder_ = StaggeredDecoder<T>(store_, dc);
  if (config_.has_cnn()) rp_head_ = PredictionHead<T>(store_, "rp_head", dc.cnn_channels.back());
  if (config_.has_attn()) sp_head_ = PredictionHead<T>(store_, "sp_head", d);
}

template <Real T>
ModelOutput<T> GraftNet<T>::forward(const Tensor<T>& image, bool training) {
  if (image.rank() != 4) check_image_input(image, config_.input_hw, "graftnet");
  Tensor<T> attn_image;
  if (config_.has_attn()) attn_image = bilinear_resize(image, config_.attn_input_hw, config_.attn_input_hw);
  return forward(image, attn_image, training);
}

template <Real T>
ModelOutput<T> GraftNet<T>::forward(const Tensor<T>& image, const Tensor<T>& attn_image, bool training) {
  ModelOutput<T> out;
  Tensor<T> s_feat;
  if (attn_) {
    auto s_pyr = attn_->forward(attn_image, training);
    s_feat = decoder_.decode_attn(s_pyr, training);
    out.sp = sp_head_(s_feat);
  }
  if (!cnn_) {
    // The attention-only baseline predicts from its single head.
    out.pred = bilinear_resize(out.sp, image.dim(2), image.dim(3));
    out.sp = Tensor<T>();
    return out;
  }
  auto r_pyr = cnn_->forward(image, training);
  const auto& r5 = r_pyr.at(5);
  out.graft_hw = r5.dim(2);
  out.rp = rp_head_(r5);
  Tensor<T> z;
  if (cmgm_) {
    auto g = cmgm_->graft(r5, s_feat, training);
    z = g.z;
    out.cam = g.cam;
    out.y = g.y;
    out.y_sym = g.y_sym;
  }
  auto grafted = decoder_.decode_grafted(z, r5, training);
  out.pred = decoder_.decode_cnn(grafted, r_pyr, image.dim(2), training);
  return out;
}

template class GraftNet<float>;
template class GraftNet<double>;

}  // namespace graftnet
