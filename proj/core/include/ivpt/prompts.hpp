#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ivpt/reinforce.hpp"
#include "ivpt/tape.hpp"
#include "ivpt/vit.hpp"

namespace ivpt {

enum class Structure { VptShallow, VptDeep, ProVP, Express, VanillaCdc, Cdc };
enum class GammaInit { Identity, Zero, Uniform };

std::string to_string(Structure s);
Structure parse_structure(const std::string& text);
std::string to_string(GammaInit g);
GammaInit parse_gamma_init(const std::string& text);

// Output-preserving structures feed prompt-slot outputs into the next layer.
bool keeps_prompt_outputs(Structure s);
// Dynamic aggregation mixes a cross-layer prompt term, which only the CDC
// family has.
bool supports_da(Structure s);

struct PromptConfig {
  Structure structure = Structure::Cdc;
  bool da = false;
  GammaInit gamma_init = GammaInit::Identity;
  std::size_t num_prompts = 4;
  ArMode ar = ArMode::None;
  std::size_t ar_k = 2;
  // Layers receiving reinforcement; empty means every layer.
  std::vector<std::size_t> ar_layers;

  void validate(const ModelConfig& model) const;
  // Rows of each AR prompt tensor: 0, k, or M depending on the mode.
  std::size_t ar_rows(const ModelConfig& model) const;
  bool ar_on_layer(std::size_t layer) const;
};

// All learnable adaptation state.
struct PromptBank {
  PromptConfig config;
  std::size_t dim = 0;
  // P^l, [N x D]. VPT-shallow and EXPRESS only own P^0.
  std::vector<Tensor> prompts;
  // gamma[l-1] is used when composing layer l; [N x N]. Empty unless DA.
  std::vector<Tensor> gamma;
  // Per-layer AR prompts; an empty tensor for layers without reinforcement.
  std::vector<Tensor> ar_prompts;
  // EXPRESS per-layer offsets.
  std::vector<PromptOffsets> express;

  static PromptBank create(const ModelConfig& model, const PromptConfig& config,
                           std::uint64_t seed);
  void register_parameters(ParameterRegistry& registry) const;
};

// What the previous layer leaves behind for prompt composition.
struct PromptState {
  Tensor input;   // P-hat of the previous layer
  Tensor output;  // retained prompt-slot outputs of the previous layer
};

// psi(P) = gamma . P
Tensor da_aggregate(Tape& tape, const Tensor& previous, const Tensor& gamma);

// Input prompt block P-hat for layer `layer`. `previous` is null at layer 0.
Tensor compose_input_prompts(Tape& tape, const PromptBank& bank, std::size_t layer,
                             std::size_t num_layers, const PromptState* previous);

struct ParamBreakdown {
  std::size_t cdc = 0;
  std::size_t da = 0;
  std::size_t ar = 0;
  std::size_t express = 0;
  std::size_t head = 0;
  std::size_t total = 0;
};

// Closed-form learnable-parameter counts.
ParamBreakdown count_learnable_params(const ModelConfig& model, const PromptConfig& prompts);

}  // namespace ivpt
