#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ivpt/data.hpp"
#include "ivpt/model.hpp"

namespace ivpt {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 10;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

// Linear warmup to base_lr over warmup_epochs, then cosine decay.
double lr_schedule(std::size_t epoch, const TrainConfig& config);

// v <- momentum v + g + wd p;  p <- p - lr v
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum, double weight_decay);

// Momentum SGD over the trainable entries of a registry.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ParameterRegistry& registry, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;
  double eval_acc = 0.0;
};

std::string to_json_line(const EpochMetrics& m);

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  double initial_loss = 0.0;
  double initial_train_acc = 0.0;
  double initial_eval_acc = 0.0;
  double final_top1 = 0.0;
  std::size_t learnable_params = 0;
  double wall_seconds = 0.0;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
};

// Mean cross-entropy and logits for a batch of samples.
struct BatchOutput {
  Tensor loss;
  Tensor logits;
};
BatchOutput batch_loss(Tape& tape, const PromptedModel& model, const Dataset& data,
                       std::span<const std::size_t> indices);

std::size_t argmax_row(const Tensor& logits, std::size_t row);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalResult evaluate(const PromptedModel& model, const Dataset& data);

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Trains the bank and head with the backbone frozen. Throws NumericError on
// a non-finite loss.
RunMetrics train(PromptedModel& model, const Dataset& train_set, const Dataset& eval_set,
                 const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace ivpt
