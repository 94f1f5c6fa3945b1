#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ivpt/model.hpp"
#include "ivpt/tensor.hpp"

namespace ivpt {

// Logit magnitude above which exp() of the unnormalized weight is refused.
inline constexpr double kMaxDecompositionLogit = 300.0;
inline constexpr double kDecompositionTolerance = 1e-10;

// Outcome of checking that a composite key splits the class-token attention
// exponential into a product of per-term factors.
struct DecompositionReport {
  std::string kind;  // "cdc", "da", or "*-ln" for the normalized key path
  std::size_t layer = 0;
  std::size_t head = 0;
  // Relative |LHS - RHS| / LHS per prompt.
  std::vector<double> residuals;
  // Per prompt: the re-weighting term (cdc) or the product of all N factors (da).
  std::vector<double> reweighting;
  // da only: factors[i][j] = exp(gamma_ij q.W_K p_prev_j / s).
  std::vector<std::vector<double>> factors;
  // Relative spread of w~_i / (w_i * reweighting_i) across prompts; the ratio
  // is the shared softmax denominator and must not depend on i.
  double proportionality_spread = 0.0;
  double max_residual = 0.0;
  double tolerance = kDecompositionTolerance;
  bool pass = false;
};

// Columns of W_K belonging to one head: [D x head_dim].
Tensor key_head_slice(const Tensor& w_k, std::size_t head, std::size_t head_dim);

// Layer-norm-free key path: key(p) = p . W_K (head slice), logit = q.key / scale.
DecompositionReport verify_cdc_decomposition(std::span<const double> query, const Tensor& w_k_head,
                                             const Tensor& prompts, const Tensor& previous,
                                             double scale,
                                             double tolerance = kDecompositionTolerance);

DecompositionReport verify_da_decomposition(std::span<const double> query, const Tensor& w_k_head,
                                            const Tensor& prompts, const Tensor& previous,
                                            const Tensor& gamma, double scale,
                                            double tolerance = kDecompositionTolerance);

// Same split through the model's actual key path (LayerNorm + bias). The
// identity does not hold there; residuals are informational.
DecompositionReport measure_ln_path_residual(std::span<const double> query, const LayerParams& layer,
                                             std::size_t head, std::size_t head_dim,
                                             const Tensor& prompts, const Tensor& combined_previous,
                                             double scale);

// Head-mean class-token attention over image slots, one row per layer.
std::vector<std::vector<double>> export_attention(const PromptedModel& model, const Tensor& image);
void write_attention_csv(std::ostream& out, const std::vector<std::vector<double>>& rows);
void write_attention_csv(const std::filesystem::path& path,
                         const std::vector<std::vector<double>>& rows);

}  // namespace ivpt
