#include "ivpt/vit.hpp"

#include <cmath>
#include <random>

#include "ivpt/error.hpp"

namespace ivpt {
namespace {

constexpr double kLayerNormEps = 1e-6;

Tensor xavier(std::mt19937_64& rng, std::size_t in, std::size_t out) {
  const double r = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-r, r);
  Tensor t({in, out});
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

Tensor normal(std::mt19937_64& rng, Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

Tensor to_matrix(Tape& tape, const TokenSequence& seq) {
  const Tensor parts[] = {seq.cls, seq.prompts, seq.images};
  return tape.concat_rows(parts);
}

TokenSequence from_matrix(Tape& tape, const Tensor& x, std::size_t prompts, std::size_t images) {
  TokenSequence out;
  out.cls = tape.slice_rows(x, 0, 1);
  out.prompts = tape.slice_rows(x, 1, prompts);
  out.images = tape.slice_rows(x, 1 + prompts, images);
  return out;
}

Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return tape.add_bias(tape.matmul(x, w), b);
}

std::vector<std::size_t> prompt_rows(std::size_t count) {
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = 1 + i;
  return rows;
}

}  // namespace

void ModelConfig::validate() const {
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  if (image_height == 0 || image_width == 0 || channels == 0) {
    throw ConfigError("image dimensions must be positive");
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_height) + "x" +
                      std::to_string(image_width) + " not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (heads == 0) throw ConfigError("heads must be >= 1");
  if (dim == 0 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

Backbone::Backbone(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.dim;
  const std::size_t hidden = d * config_.mlp_ratio;
  patch_weight_ = xavier(rng, config_.patch_dim(), d);
  patch_bias_ = Tensor::zeros({d});
  position_ = normal(rng, {config_.image_tokens(), d}, 0.5);
  cls_token_ = normal(rng, {1, d}, 0.5);
  layers_.reserve(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    LayerParams p;
    p.wq = xavier(rng, d, d);
    p.wk = xavier(rng, d, d);
    p.wv = xavier(rng, d, d);
    p.wo = xavier(rng, d, d);
    p.w1 = xavier(rng, d, hidden);
    p.w2 = xavier(rng, hidden, d);
    p.bq = Tensor::zeros({d});
    p.bk = Tensor::zeros({d});
    p.bv = Tensor::zeros({d});
    p.bo = Tensor::zeros({d});
    p.b1 = Tensor::zeros({hidden});
    p.b2 = Tensor::zeros({d});
    p.ln1_gain = Tensor({d}, 1.0);
    p.ln1_bias = Tensor::zeros({d});
    p.ln2_gain = Tensor({d}, 1.0);
    p.ln2_bias = Tensor::zeros({d});
    layers_.push_back(std::move(p));
  }
}

Tensor Backbone::extract_patches(const Tensor& image) const {
  const auto& c = config_;
  if (image.shape() != Shape{c.image_height, c.image_width, c.channels}) {
    throw DimensionError("image " + shape_to_string(image.shape()) + " does not match config " +
                         shape_to_string({c.image_height, c.image_width, c.channels}));
  }
  const std::size_t p = c.patch_size;
  Tensor patches({c.image_tokens(), c.patch_dim()});
  double* out = patches.mutable_values().data();
  for (std::size_t gy = 0; gy < c.grid_height(); ++gy) {
    for (std::size_t gx = 0; gx < c.grid_width(); ++gx) {
      for (std::size_t dy = 0; dy < p; ++dy) {
        const double* src =
            image.values().data() + ((gy * p + dy) * c.image_width + gx * p) * c.channels;
        out = std::copy(src, src + p * c.channels, out);
      }
    }
  }
  return patches;
}

TokenSequence Backbone::embed(Tape& tape, const Tensor& image) const {
  TokenSequence seq;
  const Tensor patches = extract_patches(image);
  seq.images = tape.add(affine(tape, patches, patch_weight_, patch_bias_), position_);
  seq.cls = cls_token_;
  seq.prompts = Tensor::zeros({0, config_.dim});
  return seq;
}

LayerOutput Backbone::attention(Tape& tape, const TokenSequence& normalized,
                                const LayerParams& layer, std::size_t layer_index) const {
  const Tensor x = to_matrix(tape, normalized);
  const Tensor q = affine(tape, x, layer.wq, layer.bq);
  const Tensor k = affine(tape, x, layer.wk, layer.bk);
  const Tensor v = affine(tape, x, layer.wv, layer.bv);
  AttentionOutput att = tape.multi_head_attention(q, k, v, config_.heads);
  const Tensor mixed = affine(tape, att.output, layer.wo, layer.bo);

  LayerOutput out;
  out.sequence = from_matrix(tape, mixed, normalized.prompt_count(), normalized.image_count());

  AttentionRecord& rec = out.record;
  const std::size_t heads = config_.heads, dh = config_.head_dim();
  const std::size_t t = x.rows(), m = normalized.image_count(), n = normalized.prompt_count();
  rec.layer = layer_index;
  rec.prompt_count = n;
  rec.logits = att.logits;
  rec.weights = att.weights;
  rec.cls_queries = Tensor({heads, dh});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t c = 0; c < dh; ++c) rec.cls_queries.at(h, c) = q[h * dh + c];
  rec.cls_image_weights = Tensor({m});
  for (std::size_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (std::size_t h = 0; h < heads; ++h) acc += att.weights[(h * t) * t + 1 + n + j];
    rec.cls_image_weights[j] = acc / static_cast<double>(heads);
  }
  return out;
}

LayerOutput Backbone::forward_layer(Tape& tape, const TokenSequence& seq, std::size_t layer_index,
                                    bool keep_prompt_outputs, const PromptOffsets* offsets) const {
  if (layer_index >= layers_.size()) throw ContractError("layer index out of range");
  if (seq.prompts_stale) throw ContractError("forward_layer: prompt block is stale");
  const LayerParams& p = layers_[layer_index];
  const std::size_t n = seq.prompt_count(), m = seq.image_count();
  const std::vector<std::size_t> rows = prompt_rows(n);
  auto offset_rows = [&](const Tensor& x, const Tensor& delta) {
    return (delta.empty() || n == 0) ? x : tape.add_to_rows(x, rows, delta);
  };

  Tensor x = to_matrix(tape, seq);
  if (offsets) x = offset_rows(x, offsets->pre_norm);
  Tensor h = tape.layer_norm(x, p.ln1_gain, p.ln1_bias, kLayerNormEps);
  if (offsets) h = offset_rows(h, offsets->pre_projection);

  LayerOutput att = attention(tape, from_matrix(tape, h, n, m), p, layer_index);
  Tensor a = to_matrix(tape, att.sequence);
  if (offsets) a = offset_rows(a, offsets->post_attention);

  const Tensor x1 = tape.add(x, a);
  const Tensor h2 = tape.layer_norm(x1, p.ln2_gain, p.ln2_bias, kLayerNormEps);
  const Tensor mlp = affine(tape, tape.gelu(affine(tape, h2, p.w1, p.b1)), p.w2, p.b2);
  const Tensor x2 = tape.add(x1, mlp);

  LayerOutput out;
  out.record = std::move(att.record);
  out.sequence.cls = tape.slice_rows(x2, 0, 1);
  out.sequence.images = tape.slice_rows(x2, 1 + n, m);
  if (keep_prompt_outputs) {
    out.sequence.prompts = tape.slice_rows(x2, 1, n);
  } else {
    out.sequence.prompts = Tensor::zeros({0, config_.dim});
    out.sequence.prompts_stale = true;
  }
  return out;
}

Tensor Backbone::forward_plain(Tape& tape, const Tensor& image) const {
  const Tensor patches = extract_patches(image);
  Tensor images = tape.add(affine(tape, patches, patch_weight_, patch_bias_), position_);
  Tensor x;
  {
    const Tensor parts[] = {cls_token_, images};
    x = tape.concat_rows(parts);
  }
  for (const LayerParams& p : layers_) {
    const Tensor h = tape.layer_norm(x, p.ln1_gain, p.ln1_bias, kLayerNormEps);
    const Tensor q = affine(tape, h, p.wq, p.bq);
    const Tensor k = affine(tape, h, p.wk, p.bk);
    const Tensor v = affine(tape, h, p.wv, p.bv);
    const Tensor a = affine(tape, tape.multi_head_attention(q, k, v, config_.heads).output, p.wo, p.bo);
    const Tensor x1 = tape.add(x, a);
    const Tensor h2 = tape.layer_norm(x1, p.ln2_gain, p.ln2_bias, kLayerNormEps);
    x = tape.add(x1, affine(tape, tape.gelu(affine(tape, h2, p.w1, p.b1)), p.w2, p.b2));
  }
  return tape.slice_rows(x, 0, 1);
}

void Backbone::register_parameters(ParameterRegistry& registry) const {
  registry.add("backbone.patch_weight", patch_weight_, false);
  registry.add("backbone.patch_bias", patch_bias_, false);
  registry.add("backbone.position", position_, false);
  registry.add("backbone.cls_token", cls_token_, false);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerParams& p = layers_[l];
    const std::string prefix = "backbone.layer" + std::to_string(l) + ".";
    const std::pair<const char*, const Tensor*> named[] = {
        {"wq", &p.wq},       {"bq", &p.bq},           {"wk", &p.wk},
        {"bk", &p.bk},       {"wv", &p.wv},           {"bv", &p.bv},
        {"wo", &p.wo},       {"bo", &p.bo},           {"w1", &p.w1},
        {"b1", &p.b1},       {"w2", &p.w2},           {"b2", &p.b2},
        {"ln1_gain", &p.ln1_gain}, {"ln1_bias", &p.ln1_bias}, {"ln2_gain", &p.ln2_gain},
        {"ln2_bias", &p.ln2_bias}};
    for (const auto& [name, tensor] : named) registry.add(prefix + name, *tensor, false);
  }
}

Head Head::create(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return Head{xavier(rng, dim, classes), Tensor::zeros({classes})};
}

Tensor Head::apply(Tape& tape, const Tensor& cls_out) const {
  if (cls_out.cols() != weight.rows()) {
    throw DimensionError("head: input " + shape_to_string(cls_out.shape()) + " vs weight " +
                         shape_to_string(weight.shape()));
  }
  return affine(tape, cls_out, weight, bias);
}

}  // namespace ivpt
