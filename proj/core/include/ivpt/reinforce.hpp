#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ivpt/tape.hpp"
#include "ivpt/tensor.hpp"

namespace ivpt {

// Which image tokens receive attentive-reinforcement prompts.
enum class ArMode { None, All, TopK };

std::string to_string(ArMode mode);
ArMode parse_ar_mode(const std::string& text);

struct SalienceSelection {
  std::size_t layer = 0;
  // Image-token indices in descending salience.
  std::vector<std::size_t> omega;
  // Head-mean class-row attention over image slots [M].
  Tensor weights_used;
};

// Indices of the k largest entries of w, descending by value, ties broken by
// the smaller index.
SalienceSelection topk_select(const Tensor& weights, std::size_t k, std::size_t layer = 0);

// Identity ordering over all M image tokens.
SalienceSelection select_all(const Tensor& weights, std::size_t layer = 0);

// Z with row omega[j] += ar_prompts[j]. Gradients flow into both Z and the
// prompts; the selection itself is not differentiated.
Tensor reinforce(Tape& tape, const Tensor& image_tokens, const SalienceSelection& selection,
                 const Tensor& ar_prompts);

// Applies one layer's reinforcement according to the mode. `ar_prompts` is
// [k x D] for TopK, [M x D] for All, and ignored for None. Returns the
// selection used (empty omega when nothing was added).
struct ReinforceResult {
  Tensor images;
  SalienceSelection selection;
};
ReinforceResult apply_ar(Tape& tape, ArMode mode, const Tensor& image_tokens,
                         const Tensor& cls_image_weights, const Tensor& ar_prompts,
                         std::size_t layer);

}  // namespace ivpt
