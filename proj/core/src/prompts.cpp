#include "ivpt/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ivpt/error.hpp"

namespace ivpt {
namespace {

Tensor uniform(std::mt19937_64& rng, Shape shape, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

std::size_t owned_prompt_layers(Structure s, std::size_t layers) {
  return (s == Structure::VptShallow || s == Structure::Express) ? 1 : layers;
}

const PromptState& require_previous(const PromptState* previous, bool want_output,
                                    Structure s) {
  if (previous == nullptr) {
    throw ContractError("compose_input_prompts: " + to_string(s) +
                        " needs the previous layer's prompt state");
  }
  const Tensor& t = want_output ? previous->output : previous->input;
  if (t.rank() != 2) {
    throw ContractError(std::string("compose_input_prompts: ") + to_string(s) + " needs the previous " +
                        (want_output ? "prompt outputs" : "input prompts"));
  }
  return *previous;
}

}  // namespace

std::string to_string(Structure s) {
  switch (s) {
    case Structure::VptShallow: return "vpt-shallow";
    case Structure::VptDeep: return "vpt-deep";
    case Structure::ProVP: return "provp";
    case Structure::Express: return "express";
    case Structure::VanillaCdc: return "vanilla-cdc";
    case Structure::Cdc: return "cdc";
  }
  return "cdc";
}

Structure parse_structure(const std::string& text) {
  for (Structure s : {Structure::VptShallow, Structure::VptDeep, Structure::ProVP,
                      Structure::Express, Structure::VanillaCdc, Structure::Cdc}) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown structure '" + text +
                    "' (expected vpt-shallow, vpt-deep, provp, express, vanilla-cdc or cdc)");
}

std::string to_string(GammaInit g) {
  switch (g) {
    case GammaInit::Identity: return "identity";
    case GammaInit::Zero: return "zero";
    case GammaInit::Uniform: return "uniform";
  }
  return "identity";
}

GammaInit parse_gamma_init(const std::string& text) {
  if (text == "identity") return GammaInit::Identity;
  if (text == "zero") return GammaInit::Zero;
  if (text == "uniform") return GammaInit::Uniform;
  throw ConfigError("unknown gamma init '" + text + "' (expected identity, zero or uniform)");
}

bool keeps_prompt_outputs(Structure s) {
  return s == Structure::VptShallow || s == Structure::ProVP || s == Structure::Express;
}

bool supports_da(Structure s) { return s == Structure::Cdc; }

void PromptConfig::validate(const ModelConfig& model) const {
  if (da && !supports_da(structure)) {
    throw ConfigError("dynamic aggregation requires the cdc structure, got " + to_string(structure));
  }
  if (ar == ArMode::TopK && ar_k > model.image_tokens()) {
    throw ConfigError("ar_k=" + std::to_string(ar_k) + " exceeds the " +
                      std::to_string(model.image_tokens()) + " image tokens");
  }
  std::vector<std::size_t> sorted = ar_layers;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("ar_layers contains duplicates");
  }
  if (!sorted.empty() && sorted.back() >= model.layers) {
    throw ConfigError("ar_layers entry " + std::to_string(sorted.back()) + " >= layer count");
  }
}

std::size_t PromptConfig::ar_rows(const ModelConfig& model) const {
  switch (ar) {
    case ArMode::None: return 0;
    case ArMode::All: return model.image_tokens();
    case ArMode::TopK: return ar_k;
  }
  return 0;
}

bool PromptConfig::ar_on_layer(std::size_t layer) const {
  return ar_layers.empty() || std::find(ar_layers.begin(), ar_layers.end(), layer) != ar_layers.end();
}

PromptBank PromptBank::create(const ModelConfig& model, const PromptConfig& config,
                              std::uint64_t seed) {
  model.validate();
  config.validate(model);
  PromptBank bank;
  bank.config = config;
  bank.dim = model.dim;
  const std::size_t n = config.num_prompts, d = model.dim, layers = model.layers;
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(d + d));
  for (std::size_t l = 0; l < owned_prompt_layers(config.structure, layers); ++l) {
    bank.prompts.push_back(uniform(rng, {n, d}, bound));
  }
  if (config.da) {
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      switch (config.gamma_init) {
        case GammaInit::Identity: bank.gamma.push_back(Tensor::identity(n)); break;
        case GammaInit::Zero: bank.gamma.push_back(Tensor::zeros({n, n})); break;
        case GammaInit::Uniform:
          bank.gamma.push_back(uniform(rng, {n, n}, n ? std::sqrt(3.0 / static_cast<double>(n)) : 0.0));
          break;
      }
    }
  }
  const std::size_t ar_rows = config.ar_rows(model);
  for (std::size_t l = 0; l < layers; ++l) {
    bank.ar_prompts.push_back(ar_rows > 0 && config.ar_on_layer(l) ? Tensor::zeros({ar_rows, d})
                                                                  : Tensor());
  }
  if (config.structure == Structure::Express) {
    for (std::size_t l = 0; l < layers; ++l) {
      bank.express.push_back(
          PromptOffsets{Tensor::zeros({n, d}), Tensor::zeros({n, d}), Tensor::zeros({n, d})});
    }
  }
  return bank;
}

void PromptBank::register_parameters(ParameterRegistry& registry) const {
  for (std::size_t l = 0; l < prompts.size(); ++l) {
    registry.add("prompts.P" + std::to_string(l), prompts[l], true);
  }
  for (std::size_t l = 0; l < gamma.size(); ++l) {
    registry.add("prompts.gamma" + std::to_string(l), gamma[l], true);
  }
  for (std::size_t l = 0; l < ar_prompts.size(); ++l) {
    if (ar_prompts[l].numel() > 0) registry.add("prompts.ar" + std::to_string(l), ar_prompts[l], true);
  }
  for (std::size_t l = 0; l < express.size(); ++l) {
    const std::string prefix = "prompts.express" + std::to_string(l) + ".";
    registry.add(prefix + "pre_norm", express[l].pre_norm, true);
    registry.add(prefix + "pre_projection", express[l].pre_projection, true);
    registry.add(prefix + "post_attention", express[l].post_attention, true);
  }
}

Tensor da_aggregate(Tape& tape, const Tensor& previous, const Tensor& gamma) {
  if (gamma.rank() != 2 || previous.rank() != 2 || gamma.shape()[0] != gamma.shape()[1] ||
      gamma.shape()[1] != previous.rows()) {
    throw DimensionError("da_aggregate: gamma " + shape_to_string(gamma.shape()) +
                         " incompatible with prompts " + shape_to_string(previous.shape()));
  }
  return tape.matmul(gamma, previous);
}

Tensor compose_input_prompts(Tape& tape, const PromptBank& bank, std::size_t layer,
                             std::size_t num_layers, const PromptState* previous) {
  if (layer >= num_layers) {
    throw ContractError("compose_input_prompts: layer " + std::to_string(layer) +
                        " out of range for " + std::to_string(num_layers) + " layers");
  }
  const Structure s = bank.config.structure;
  if (layer == 0) return bank.prompts.at(0);
  switch (s) {
    case Structure::VptDeep:
      return bank.prompts.at(layer);
    case Structure::VptShallow:
      return require_previous(previous, true, s).output;
    case Structure::Cdc: {
      const Tensor& prev = bank.prompts.at(layer - 1);
      if (bank.config.da) {
        return tape.add(bank.prompts.at(layer), da_aggregate(tape, prev, bank.gamma.at(layer - 1)));
      }
      return tape.add(bank.prompts.at(layer), prev);
    }
    case Structure::VanillaCdc:
      return tape.add(bank.prompts.at(layer), require_previous(previous, false, s).input);
    case Structure::ProVP:
      return tape.add(bank.prompts.at(layer), require_previous(previous, true, s).output);
    case Structure::Express:
      return require_previous(previous, true, s).output;
  }
  throw ContractError("compose_input_prompts: invalid structure");
}

ParamBreakdown count_learnable_params(const ModelConfig& model, const PromptConfig& prompts) {
  ParamBreakdown b;
  const std::size_t n = prompts.num_prompts, d = model.dim, layers = model.layers;
  b.cdc = owned_prompt_layers(prompts.structure, layers) * n * d;
  b.da = prompts.da ? (layers - 1) * n * n : 0;
  std::size_t ar_layers = prompts.ar_layers.empty() ? layers : prompts.ar_layers.size();
  b.ar = ar_layers * prompts.ar_rows(model) * d;
  b.express = prompts.structure == Structure::Express ? 3 * layers * n * d : 0;
  b.head = (d + 1) * model.num_classes;
  b.total = b.cdc + b.da + b.ar + b.express + b.head;
  return b;
}

}  // namespace ivpt
