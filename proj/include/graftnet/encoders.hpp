#pragma once

#include <cstddef>
#include <vector>

#include "graftnet/layers.hpp"

namespace graftnet {

enum class Branch { cnn, attn };

/// Shape contract of one encoder.
///
/// CNN: stage i (2..stage_count) has spatial input_hw / 2^i and channels
/// base_channels * 2^(i-1). Stage 1 (the stride-2 stem) is computed but not
/// exposed.
///
/// ATTN: stage i < stage_count has spatial (input_hw / patch_size) / 2^(i-1)
/// and channels base_channels * 2^i; the last stage keeps the previous stage's
/// resolution and channels.
struct PyramidSpec {
  std::size_t input_hw = 64;
  std::size_t base_channels = 8;
  std::size_t stage_count = 5;
  Branch branch = Branch::cnn;
  std::size_t patch_size = 4;

  /// Throws DimensionError for an indivisible input or C < 4.
  void validate() const;
  std::size_t first_stage() const { return branch == Branch::cnn ? 2 : 1; }
  std::size_t spatial(std::size_t stage) const;
  std::size_t channels(std::size_t stage) const;
};

template <Real T>
struct FeaturePyramid {
  Branch branch = Branch::cnn;
  std::vector<std::size_t> stages;
  std::vector<Tensor<T>> maps;  // [N, C, H, W] per stage

  const Tensor<T>& at(std::size_t stage) const;
};

/// ResNet-style encoder: stride-2 stem, then two basic residual blocks per
/// stage with the stride-2 downsample at stage entry.
template <Real T>
class CnnEncoder {
 public:
  CnnEncoder(ParamStore<T>& store, const PyramidSpec& spec, bool zero_init_residual = false);
  FeaturePyramid<T> forward(const Tensor<T>& image, bool training);
  const PyramidSpec& spec() const { return spec_; }

 private:
  struct BasicBlock {
    ConvBnRelu<T> conv1;
    ConvBnRelu<T> conv2;
    ConvBnRelu<T> shortcut;
    bool project = false;
  };

  PyramidSpec spec_;
  ConvBnRelu<T> stem_;
  std::vector<std::vector<BasicBlock>> stages_;
};

/// Patch-embedding transformer encoder with global multi-head self-attention
/// per stage and 2x2 patch merging between the first stages.
template <Real T>
class AttnEncoder {
 public:
  AttnEncoder(ParamStore<T>& store, const PyramidSpec& spec, std::size_t heads = 1, std::size_t depth = 1);
  FeaturePyramid<T> forward(const Tensor<T>& image, bool training);
  const PyramidSpec& spec() const { return spec_; }

  /// Attention weights [N*heads, L, L] of every block in the last forward.
  const std::vector<Tensor<T>>& last_attention() const { return last_attention_; }

 private:
  struct Block {
    LayerNorm<T> norm1, norm2;
    Linear<T> q, k, v, proj, fc1, fc2;
  };
  struct Merge {
    LayerNorm<T> norm;
    Linear<T> reduce;
  };

  Tensor<T> run_block(Block& block, const Tensor<T>& tokens);

  PyramidSpec spec_;
  std::size_t heads_;
  Conv<T> embed_;
  LayerNorm<T> embed_norm_;
  std::vector<std::vector<Block>> stages_;
  std::vector<Merge> merges_;
  std::vector<Tensor<T>> last_attention_;
};

/// Validates an image batch [N, 3, H, W] with H == W == expected.
template <Real T>
void check_image_input(const Tensor<T>& image, std::size_t expected_hw, const char* who);

}  // namespace graftnet
