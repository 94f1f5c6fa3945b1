#pragma once

#include <cstdint>
#include <vector>

#include "ivpt/prompts.hpp"
#include "ivpt/reinforce.hpp"
#include "ivpt/tape.hpp"
#include "ivpt/vit.hpp"

namespace ivpt {

struct ForwardResult {
  Tensor logits;   // [1 x classes]
  Tensor cls_out;  // [1 x D]
  std::vector<AttentionRecord> records;
  std::vector<SalienceSelection> selections;
};

// Frozen backbone + prompt bank + task head, wired according to the prompt
// structure. Parameters are shared handles, so the model is move-only.
class PromptedModel {
 public:
  // The backbone is initialized from model.seed; prompts and head from
  // `run_seed`.
  PromptedModel(const ModelConfig& model, const PromptConfig& prompts, std::uint64_t run_seed);
  PromptedModel(const PromptedModel&) = delete;
  PromptedModel& operator=(const PromptedModel&) = delete;
  PromptedModel(PromptedModel&&) = default;
  PromptedModel& operator=(PromptedModel&&) = default;

  ForwardResult forward(Tape& tape, const Tensor& image) const;

  const ModelConfig& model_config() const { return backbone_.config(); }
  const PromptConfig& prompt_config() const { return bank_.config; }
  const Backbone& backbone() const { return backbone_; }
  Backbone& mutable_backbone() { return backbone_; }
  const PromptBank& bank() const { return bank_; }
  PromptBank& mutable_bank() { return bank_; }
  const Head& head() const { return head_; }
  Head& mutable_head() { return head_; }
  const ParameterRegistry& registry() const { return registry_; }
  ParameterRegistry& registry() { return registry_; }

 private:
  Backbone backbone_;
  PromptBank bank_;
  Head head_;
  ParameterRegistry registry_;
};

}  // namespace ivpt
