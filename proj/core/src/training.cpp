#include "ivpt/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "ivpt/error.hpp"
#include "json.hpp"

namespace ivpt {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (epochs > 0 && warmup_epochs >= epochs) {
    throw ConfigError("warmup_epochs (" + std::to_string(warmup_epochs) +
                      ") must be smaller than epochs (" + std::to_string(epochs) + ")");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("momentum and weight_decay must be >= 0");
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  if (epoch >= config.epochs) {
    throw ContractError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(config.epochs) + ")");
  }
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) /
           static_cast<double>(config.warmup_epochs);
  }
  const double progress = static_cast<double>(epoch - config.warmup_epochs) /
                          static_cast<double>(config.epochs - config.warmup_epochs);
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum, double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

void Sgd::step(ParameterRegistry& registry, double lr) {
  const auto& entries = registry.entries();
  velocity_.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!e.trainable || !e.tensor.has_grad()) continue;
    if (velocity_[i].size() != e.tensor.numel()) velocity_[i].assign(e.tensor.numel(), 0.0);
    Tensor t = e.tensor;
    sgd_update(t.mutable_values(), t.grad(), velocity_[i], lr, momentum_, weight_decay_);
  }
}

std::string to_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["lr"] = m.lr;
  j["loss"] = m.loss;
  j["train_acc"] = m.train_acc;
  j["eval_acc"] = m.eval_acc;
  return j.dump();
}

BatchOutput batch_loss(Tape& tape, const PromptedModel& model, const Dataset& data,
                       std::span<const std::size_t> indices) {
  std::vector<Tensor> logits;
  std::vector<std::size_t> labels;
  logits.reserve(indices.size());
  for (std::size_t idx : indices) {
    logits.push_back(model.forward(tape, data[idx].image).logits);
    labels.push_back(data[idx].label);
  }
  Tensor stacked = tape.concat_rows(logits);
  return {tape.cross_entropy(stacked, labels), stacked};
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  return best;
}

EvalResult evaluate(const PromptedModel& model, const Dataset& data) {
  if (data.empty()) return {};
  constexpr std::size_t kChunk = 64;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(data.size(), begin + kChunk); ++i) idx.push_back(i);
    Tape tape = Tape::no_grad();
    BatchOutput out = batch_loss(tape, model, data, idx);
    loss += out.loss[0] * static_cast<double>(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r)
      if (argmax_row(out.logits, r) == data[idx[r]].label) ++correct;
  }
  return {loss / static_cast<double>(data.size()),
          static_cast<double>(correct) / static_cast<double>(data.size())};
}

RunMetrics train(PromptedModel& model, const Dataset& train_set, const Dataset& eval_set,
                 const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ParameterRegistry& registry = model.registry();

  RunMetrics metrics;
  metrics.learnable_params = registry.trainable_scalars();
  metrics.backbone_hash_before = registry.frozen_hash();
  const EvalResult initial_train = evaluate(model, train_set);
  metrics.initial_loss = initial_train.loss;
  metrics.initial_train_acc = initial_train.accuracy;
  metrics.initial_eval_acc = evaluate(model, eval_set).accuracy;
  metrics.final_top1 = metrics.initial_eval_acc;

  Sgd optimizer(config.momentum, config.weight_decay);
  std::mt19937_64 shuffle_rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::span<const std::size_t> batch(order.data() + begin, end - begin);
      registry.zero_grad();
      Tape tape;
      BatchOutput out = batch_loss(tape, model, train_set, batch);
      const double loss = out.loss[0];
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                           std::to_string(begin));
      }
      tape.backward(out.loss);
      optimizer.step(registry, lr);
      loss_sum += loss * static_cast<double>(batch.size());
      for (std::size_t r = 0; r < batch.size(); ++r)
        if (argmax_row(out.logits, r) == train_set[batch[r]].label) ++correct;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    const double n = static_cast<double>(std::max<std::size_t>(1, train_set.size()));
    em.loss = loss_sum / n;
    em.train_acc = static_cast<double>(correct) / n;
    em.eval_acc = evaluate(model, eval_set).accuracy;
    metrics.epochs.push_back(em);
    metrics.final_top1 = em.eval_acc;
    if (on_epoch) on_epoch(em);
  }
  metrics.backbone_hash_after = registry.frozen_hash();
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return metrics;
}

}  // namespace ivpt
