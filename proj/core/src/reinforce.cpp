#include "ivpt/reinforce.hpp"

#include <algorithm>
#include <numeric>

#include "ivpt/error.hpp"

namespace ivpt {

std::string to_string(ArMode mode) {
  switch (mode) {
    case ArMode::None: return "none";
    case ArMode::All: return "all";
    case ArMode::TopK: return "topk";
  }
  return "none";
}

ArMode parse_ar_mode(const std::string& text) {
  if (text == "none") return ArMode::None;
  if (text == "all") return ArMode::All;
  if (text == "topk") return ArMode::TopK;
  throw ConfigError("unknown AR mode '" + text + "' (expected none, all or topk)");
}

SalienceSelection topk_select(const Tensor& weights, std::size_t k, std::size_t layer) {
  const std::size_t m = weights.numel();
  if (k > m) {
    throw ContractError("topk_select: k=" + std::to_string(k) + " exceeds " + std::to_string(m) +
                        " candidates");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (weights[a] != weights[b]) return weights[a] > weights[b];
                      return a < b;
                    });
  order.resize(k);
  return SalienceSelection{layer, std::move(order), weights};
}

SalienceSelection select_all(const Tensor& weights, std::size_t layer) {
  std::vector<std::size_t> order(weights.numel());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return SalienceSelection{layer, std::move(order), weights};
}

Tensor reinforce(Tape& tape, const Tensor& image_tokens, const SalienceSelection& selection,
                 const Tensor& ar_prompts) {
  if (selection.omega.empty()) return image_tokens;
  if (ar_prompts.rows() != selection.omega.size()) {
    throw DimensionError("reinforce: " + std::to_string(selection.omega.size()) +
                         " selected tokens but AR prompts are " +
                         shape_to_string(ar_prompts.shape()));
  }
  for (std::size_t idx : selection.omega) {
    if (idx >= image_tokens.rows()) {
      throw DimensionError("reinforce: index " + std::to_string(idx) + " out of range for " +
                           shape_to_string(image_tokens.shape()));
    }
  }
  return tape.add_to_rows(image_tokens, selection.omega, ar_prompts);
}

ReinforceResult apply_ar(Tape& tape, ArMode mode, const Tensor& image_tokens,
                         const Tensor& cls_image_weights, const Tensor& ar_prompts,
                         std::size_t layer) {
  switch (mode) {
    case ArMode::None:
      return {image_tokens, SalienceSelection{layer, {}, cls_image_weights}};
    case ArMode::All: {
      SalienceSelection sel = select_all(cls_image_weights, layer);
      Tensor out = reinforce(tape, image_tokens, sel, ar_prompts);
      return {std::move(out), std::move(sel)};
    }
    case ArMode::TopK: {
      SalienceSelection sel = topk_select(cls_image_weights, ar_prompts.rows(), layer);
      Tensor out = reinforce(tape, image_tokens, sel, ar_prompts);
      return {std::move(out), std::move(sel)};
    }
  }
  throw ContractError("apply_ar: invalid mode");
}

}  // namespace ivpt
