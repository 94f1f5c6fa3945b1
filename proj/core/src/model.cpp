#include "ivpt/model.hpp"

namespace ivpt {

PromptedModel::PromptedModel(const ModelConfig& model, const PromptConfig& prompts,
                             std::uint64_t run_seed)
    : backbone_(model),
      bank_(PromptBank::create(model, prompts, run_seed)),
      head_(Head::create(model.dim, model.num_classes, run_seed)) {
  backbone_.register_parameters(registry_);
  bank_.register_parameters(registry_);
  registry_.add("head.weight", head_.weight, true);
  registry_.add("head.bias", head_.bias, true);
}

ForwardResult PromptedModel::forward(Tape& tape, const Tensor& image) const {
  const std::size_t layers = backbone_.config().layers;
  const Structure structure = bank_.config.structure;
  const bool keep = keeps_prompt_outputs(structure);

  ForwardResult result;
  result.records.reserve(layers);
  TokenSequence seq = backbone_.embed(tape, image);
  PromptState state;
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor composed = compose_input_prompts(tape, bank_, l, layers, l == 0 ? nullptr : &state);
    seq.prompts = composed;
    seq.prompts_stale = false;
    const PromptOffsets* offsets = bank_.express.empty() ? nullptr : &bank_.express[l];
    LayerOutput out = backbone_.forward_layer(tape, seq, l, keep, offsets);

    state.input = composed;
    state.output = keep ? out.sequence.prompts : Tensor();
    if (bank_.config.ar != ArMode::None && bank_.config.ar_on_layer(l)) {
      ReinforceResult r = apply_ar(tape, bank_.config.ar, out.sequence.images,
                                   out.record.cls_image_weights, bank_.ar_prompts[l], l);
      out.sequence.images = std::move(r.images);
      result.selections.push_back(std::move(r.selection));
    }
    result.records.push_back(std::move(out.record));
    seq = std::move(out.sequence);
  }
  result.cls_out = seq.cls;
  result.logits = head_.apply(tape, seq.cls);
  return result;
}

}  // namespace ivpt
