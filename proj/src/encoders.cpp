#include "graftnet/encoders.hpp"

#include <cmath>
#include <string>

namespace graftnet {

void PyramidSpec::validate() const {
  if (base_channels < 4) throw DimensionError("base channel count must be >= 4");
  if (stage_count < 2) throw DimensionError("an encoder needs at least two stages");
  if (input_hw == 0) throw DimensionError("input size must be positive");
  if (branch == Branch::cnn) {
    const std::size_t div = std::size_t{1} << stage_count;
    if (input_hw % div != 0) {
      throw DimensionError("cnn input " + std::to_string(input_hw) + " not divisible by " + std::to_string(div));
    }
  } else {
    if (patch_size == 0) throw DimensionError("patch size must be positive");
    const std::size_t div = patch_size << (stage_count - 2);
    if (input_hw % div != 0) {
      throw DimensionError("attention input " + std::to_string(input_hw) + " not divisible by " +
                           std::to_string(div));
    }
  }
}

std::size_t PyramidSpec::spatial(std::size_t stage) const {
  if (branch == Branch::cnn) return input_hw >> stage;
  const std::size_t s = std::min(stage, stage_count - 1);
  return (input_hw / patch_size) >> (s - 1);
}

std::size_t PyramidSpec::channels(std::size_t stage) const {
  if (branch == Branch::cnn) return base_channels << (stage - 1);
  return base_channels << std::min(stage, stage_count - 1);
}

template <Real T>
const Tensor<T>& FeaturePyramid<T>::at(std::size_t stage) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] == stage) return maps[i];
  }
  throw DimensionError("pyramid has no stage " + std::to_string(stage));
}

template <Real T>
void check_image_input(const Tensor<T>& image, std::size_t expected_hw, const char* who) {
  if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != image.dim(3) || image.dim(2) != expected_hw) {
    throw DimensionError(std::string(who) + ": expected [N,3," + std::to_string(expected_hw) + "," +
                         std::to_string(expected_hw) + "] image, got " + shape_str(image.shape()));
  }
}

template <Real T>
CnnEncoder<T>::CnnEncoder(ParamStore<T>& store, const PyramidSpec& spec, bool zero_init_residual) : spec_(spec) {
  spec_.validate();
  if (spec_.branch != Branch::cnn) throw DimensionError("CnnEncoder needs a cnn pyramid spec");
  ScopedName<T> scope(store, "cnn");
  const std::size_t c = spec_.base_channels;
  stem_ = ConvBnRelu<T>(store, "stem", 3, c, 3, 2);
  std::size_t in = c;
  for (std::size_t stage = 2; stage <= spec_.stage_count; ++stage) {
    ScopedName<T> stage_scope(store, "stage" + std::to_string(stage));
    const std::size_t out = spec_.channels(stage);
    std::vector<BasicBlock> blocks;
    for (std::size_t b = 0; b < 2; ++b) {
      ScopedName<T> block_scope(store, "block" + std::to_string(b));
      const std::size_t stride = b == 0 ? 2 : 1;
      const std::size_t block_in = b == 0 ? in : out;
      BasicBlock block;
      block.conv1 = ConvBnRelu<T>(store, "conv1", block_in, out, 3, stride);
      block.conv2 = ConvBnRelu<T>(store, "conv2", out, out, 3, 1, false, zero_init_residual ? T{0} : T{1});
      block.project = stride != 1 || block_in != out;
      if (block.project) block.shortcut = ConvBnRelu<T>(store, "shortcut", block_in, out, 1, stride, false);
      blocks.push_back(std::move(block));
    }
    stages_.push_back(std::move(blocks));
    in = out;
  }
}

template <Real T>
FeaturePyramid<T> CnnEncoder<T>::forward(const Tensor<T>& image, bool training) {
  // Any square side divisible by the total stride; the configured size is nominal.
  const std::size_t div = std::size_t{1} << spec_.stage_count;
  const std::size_t side = image.rank() == 4 ? image.dim(2) : 0;
  check_image_input(image, side > 0 && side % div == 0 ? side : spec_.input_hw, "cnn encoder");
  FeaturePyramid<T> out;
  out.branch = Branch::cnn;
  Tensor<T> x = stem_(image, training);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    for (auto& block : stages_[i]) {
      auto y = block.conv2(block.conv1(x, training), training);
      auto skip = block.project ? block.shortcut(x, training) : x;
      x = relu(add(y, skip));
    }
    out.stages.push_back(i + 2);
    out.maps.push_back(x);
  }
  return out;
}

template <Real T>
AttnEncoder<T>::AttnEncoder(ParamStore<T>& store, const PyramidSpec& spec, std::size_t heads, std::size_t depth)
    : spec_(spec), heads_(heads) {
  spec_.validate();
  if (spec_.branch != Branch::attn) throw DimensionError("AttnEncoder needs an attention pyramid spec");
  for (std::size_t s = 1; s <= spec_.stage_count; ++s) {
    if (spec_.channels(s) % heads_ != 0) throw DimensionError("attention channels not divisible by head count");
  }
  ScopedName<T> scope(store, "attn");
  const std::size_t p = spec_.patch_size;
  embed_ = Conv<T>(store, "embed", 3 * p * p, spec_.channels(1), 1, 1, true);
  embed_norm_ = LayerNorm<T>(store, "embed_norm", spec_.channels(1));
  for (std::size_t s = 1; s <= spec_.stage_count; ++s) {
    ScopedName<T> stage_scope(store, "stage" + std::to_string(s));
    const std::size_t c = spec_.channels(s);
    if (s > 1 && spec_.spatial(s) != spec_.spatial(s - 1)) {
      Merge m;
      const std::size_t prev = spec_.channels(s - 1);
      m.norm = LayerNorm<T>(store, "merge_norm", 4 * prev);
      m.reduce = Linear<T>(store, "merge", 4 * prev, c);
      merges_.push_back(std::move(m));
    }
    std::vector<Block> blocks;
    for (std::size_t d = 0; d < depth; ++d) {
      ScopedName<T> block_scope(store, "block" + std::to_string(d));
      Block b;
      b.norm1 = LayerNorm<T>(store, "norm1", c);
      b.q = Linear<T>(store, "q", c, c);
      b.k = Linear<T>(store, "k", c, c);
      b.v = Linear<T>(store, "v", c, c);
      b.proj = Linear<T>(store, "proj", c, c);
      b.norm2 = LayerNorm<T>(store, "norm2", c);
      b.fc1 = Linear<T>(store, "fc1", c, 2 * c);
      b.fc2 = Linear<T>(store, "fc2", 2 * c, c);
      blocks.push_back(std::move(b));
    }
    stages_.push_back(std::move(blocks));
  }
}

template <Real T>
Tensor<T> AttnEncoder<T>::run_block(Block& b, const Tensor<T>& tokens) {
  const std::size_t c = tokens.dim(2);
  const T scale_qk = T{1} / std::sqrt(static_cast<T>(c / heads_));
  auto h = b.norm1(tokens);
  auto q = split_heads(b.q(h), heads_);
  auto k = split_heads(b.k(h), heads_);
  auto v = split_heads(b.v(h), heads_);
  auto attn = softmax_rows(scale(matmul(q, transpose(k)), scale_qk));
  last_attention_.push_back(attn);
  auto mixed = merge_heads(matmul(attn, v), heads_);
  auto x = add(tokens, b.proj(mixed));
  auto m = b.fc2(relu(b.fc1(b.norm2(x))));
  return add(x, m);
}

template <Real T>
FeaturePyramid<T> AttnEncoder<T>::forward(const Tensor<T>& image, bool /*training*/) {
  check_image_input(image, spec_.input_hw, "attention encoder");
  last_attention_.clear();
  FeaturePyramid<T> out;
  out.branch = Branch::attn;
  std::size_t side = spec_.spatial(1);
  auto tokens = embed_norm_(flatten_spatial(embed_(space_to_depth(image, spec_.patch_size))));
  std::size_t merge_index = 0;
  for (std::size_t s = 1; s <= spec_.stage_count; ++s) {
    if (s > 1 && spec_.spatial(s) != side) {
      auto grid = unflatten_spatial(tokens, side, side);
      auto& m = merges_[merge_index++];
      tokens = m.reduce(m.norm(flatten_spatial(space_to_depth(grid, 2))));
      side = spec_.spatial(s);
    }
    for (auto& block : stages_[s - 1]) tokens = run_block(block, tokens);
    out.stages.push_back(s);
    out.maps.push_back(unflatten_spatial(tokens, side, side));
  }
  return out;
}

template struct FeaturePyramid<float>;
template struct FeaturePyramid<double>;
template class CnnEncoder<float>;
template class CnnEncoder<double>;
template class AttnEncoder<float>;
template class AttnEncoder<double>;
template void check_image_input(const Tensor<float>&, std::size_t, const char*);
template void check_image_input(const Tensor<double>&, std::size_t, const char*);

}  // namespace graftnet
