#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ivpt/data.hpp"
#include "ivpt/model.hpp"
#include "ivpt/tensor.hpp"

namespace ivpt::testing {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheck {
  double max_rel = 0.0;
  std::size_t coordinates = 0;
};

// Central differences of `loss` with respect to every coordinate of `param`,
// compared against the gradient already accumulated in param.
GradCheck finite_difference(Tensor param, const std::function<double()>& loss, double h = 1e-5,
                            double floor = 1e-6);

// Mean cross-entropy of the model over `indices`, without recording.
double model_loss(const PromptedModel& model, const Dataset& data,
                  std::span<const std::size_t> indices);

std::vector<std::size_t> iota_indices(std::size_t n);

// Flattened final-layer tokens of the prompt-free backbone.
std::vector<double> frozen_features(const Backbone& backbone, const Tensor& image);

// Softmax regression on fixed features trained by full-batch gradient
// descent; returns training accuracy.
double linear_probe_accuracy(const std::vector<std::vector<double>>& features,
                             const std::vector<std::size_t>& labels, std::size_t classes,
                             std::size_t steps = 300, double lr = 0.5);

ModelConfig tiny_model();

}  // namespace ivpt::testing
