#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ivpt/tape.hpp"
#include "ivpt/tensor.hpp"

namespace ivpt {

struct ModelConfig {
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t mlp_ratio = 2;
  std::size_t num_classes = 4;
  // Seed of the frozen backbone initialization.
  std::uint64_t seed = 0;

  std::size_t grid_height() const { return image_height / patch_size; }
  std::size_t grid_width() const { return image_width / patch_size; }
  std::size_t image_tokens() const { return grid_height() * grid_width(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return dim / heads; }

  // Throws ConfigError on an invalid combination.
  void validate() const;
};

// Projection weights are stored [in x out] so that y = x . W + b.
struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor w1, b1, w2, b2;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

// [cls | prompts | images]. When `prompts_stale` is set the prompt block was
// dropped by the previous layer and must be rebuilt by the prompt structure.
struct TokenSequence {
  Tensor cls;
  Tensor prompts;
  Tensor images;
  bool prompts_stale = false;

  std::size_t prompt_count() const { return prompts.rows(); }
  std::size_t image_count() const { return images.rows(); }
  std::size_t length() const { return 1 + prompt_count() + image_count(); }
  std::size_t prompt_begin() const { return 1; }
  std::size_t image_begin() const { return 1 + prompt_count(); }
};

struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t prompt_count = 0;
  // [heads x T x T] scaled logits and post-softmax weights.
  Tensor logits;
  Tensor weights;
  // Projected class-token query per head [heads x head_dim].
  Tensor cls_queries;
  // Mean over heads of the class-token weight row restricted to image slots [M].
  Tensor cls_image_weights;
};

// Additive offsets on the prompt slots inside one layer.
struct PromptOffsets {
  Tensor pre_norm;
  Tensor pre_projection;
  Tensor post_attention;
};

struct LayerOutput {
  TokenSequence sequence;
  AttentionRecord record;
};

// Frozen vision transformer: patch embedding, positional embedding, class
// token and pre-LN transformer layers.
class Backbone {
 public:
  explicit Backbone(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  std::vector<LayerParams>& mutable_layers() { return layers_; }
  Tensor& patch_weight() { return patch_weight_; }
  Tensor& patch_bias() { return patch_bias_; }
  Tensor& position() { return position_; }
  Tensor& cls_token() { return cls_token_; }

  // Flattens an [H x W x C] image into [M x patch_dim] patch rows, row-major
  // over the patch grid, (dy, dx, c) order within a patch.
  Tensor extract_patches(const Tensor& image) const;

  // Image tokens receive positional embeddings; the prompt block is empty.
  TokenSequence embed(Tape& tape, const Tensor& image) const;

  // Multi-head self-attention over the full [T x D] (already normalized)
  // token matrix. Returns the pre-output-projection mix projected by W_O and
  // the attention record.
  LayerOutput attention(Tape& tape, const TokenSequence& normalized, const LayerParams& layer,
                        std::size_t layer_index) const;

  LayerOutput forward_layer(Tape& tape, const TokenSequence& seq, std::size_t layer_index,
                            bool keep_prompt_outputs, const PromptOffsets* offsets = nullptr) const;

  // Prompt-free reference path: [cls | images] through every layer; returns
  // the final class token.
  Tensor forward_plain(Tape& tape, const Tensor& image) const;

  // Registers every backbone tensor as frozen, prefixed "backbone.".
  void register_parameters(ParameterRegistry& registry) const;

 private:
  ModelConfig config_;
  Tensor patch_weight_, patch_bias_, position_, cls_token_;
  std::vector<LayerParams> layers_;
};

// Linear task head; always trainable.
struct Head {
  Tensor weight;  // [D x classes]
  Tensor bias;    // [classes]

  static Head create(std::size_t dim, std::size_t classes, std::uint64_t seed);
  Tensor apply(Tape& tape, const Tensor& cls_out) const;
};

}  // namespace ivpt
