#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ivpt/training.hpp"

namespace ivpt::testing {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheck finite_difference(Tensor param, const std::function<double()>& loss, double h,
                            double floor) {
  GradCheck out;
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = loss();
    param[i] = saved - h;
    const double down = loss();
    param[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    out.max_rel = std::max(out.max_rel, relative_error(a, numeric, floor));
    ++out.coordinates;
  }
  return out;
}

double model_loss(const PromptedModel& model, const Dataset& data,
                  std::span<const std::size_t> indices) {
  Tape tape = Tape::no_grad();
  return batch_loss(tape, model, data, indices).loss[0];
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<double> frozen_features(const Backbone& backbone, const Tensor& image) {
  Tape tape = Tape::no_grad();
  TokenSequence seq = backbone.embed(tape, image);
  for (std::size_t l = 0; l < backbone.config().layers; ++l) {
    seq = backbone.forward_layer(tape, seq, l, true).sequence;
  }
  std::vector<double> f(seq.cls.values().begin(), seq.cls.values().end());
  f.insert(f.end(), seq.images.values().begin(), seq.images.values().end());
  return f;
}

double linear_probe_accuracy(const std::vector<std::vector<double>>& features,
                             const std::vector<std::size_t>& labels, std::size_t classes,
                             std::size_t steps, double lr) {
  const std::size_t n = features.size(), d = features.front().size();
  // Standardize each feature so one step size suits every column.
  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  for (const auto& f : features)
    for (std::size_t j = 0; j < d; ++j) mean[j] += f[j] / static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    double var = 0.0;
    for (const auto& f : features) var += (f[j] - mean[j]) * (f[j] - mean[j]);
    var /= static_cast<double>(n);
    inv_std[j] = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
  }
  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] = (features[i][j] - mean[j]) * inv_std[j];

  std::vector<double> w(d * classes, 0.0), b(classes, 0.0), logits(classes), p(classes);
  auto forward = [&](std::size_t i) {
    for (std::size_t c = 0; c < classes; ++c) {
      double z = b[c];
      for (std::size_t j = 0; j < d; ++j) z += x[i][j] * w[j * classes + c];
      logits[c] = z;
    }
  };
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<double> gw(d * classes, 0.0), gb(classes, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      forward(i);
      const double m = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) z += (p[c] = std::exp(logits[c] - m));
      for (std::size_t c = 0; c < classes; ++c) {
        const double g = (p[c] / z - (c == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
        gb[c] += g;
        for (std::size_t j = 0; j < d; ++j) gw[j * classes + c] += g * x[i][j];
      }
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    for (std::size_t c = 0; c < classes; ++c) b[c] -= lr * gb[c];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    forward(i);
    if (static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()) ==
        labels[i])
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.image_height = 8;
  m.image_width = 8;
  m.patch_size = 4;
  m.dim = 16;
  m.heads = 2;
  m.layers = 2;
  m.mlp_ratio = 2;
  m.num_classes = 3;
  m.seed = 5;
  return m;
}

}  // namespace ivpt::testing
