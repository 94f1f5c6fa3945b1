#include "ivpt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "ivpt/error.hpp"

namespace ivpt {
namespace {

// q . (row . W) / scale, accumulating the key first.
double key_logit(std::span<const double> query, std::span<const double> row, const Tensor& w_head,
                 double scale) {
  const std::size_t d = w_head.rows(), dh = w_head.cols();
  double logit = 0.0;
  for (std::size_t c = 0; c < dh; ++c) {
    double key = 0.0;
    for (std::size_t r = 0; r < d; ++r) key += row[r] * w_head.at(r, c);
    logit += query[c] * key;
  }
  return logit / scale;
}

double guarded_exp(double logit) {
  if (!std::isfinite(logit) || std::abs(logit) > kMaxDecompositionLogit) {
    throw NumericError("decomposition logit " + std::to_string(logit) + " exceeds |" +
                       std::to_string(kMaxDecompositionLogit) + "|");
  }
  return std::exp(logit);
}

std::span<const double> row_of(const Tensor& t, std::size_t i) {
  return t.values().subspan(i * t.cols(), t.cols());
}

void check_inputs(std::span<const double> query, const Tensor& w_head, const Tensor& prompts,
                  const Tensor& previous) {
  if (w_head.rank() != 2 || query.size() != w_head.cols()) {
    throw DimensionError("decomposition: query of length " + std::to_string(query.size()) +
                         " vs key slice " + shape_to_string(w_head.shape()));
  }
  if (prompts.shape() != previous.shape() || prompts.cols() != w_head.rows()) {
    throw DimensionError("decomposition: prompts " + shape_to_string(prompts.shape()) +
                         ", previous " + shape_to_string(previous.shape()) + ", key slice " +
                         shape_to_string(w_head.shape()));
  }
}

std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) return {};
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - m));
  for (double& v : out) v /= z;
  return out;
}

// Fills residuals, spread and pass from per-prompt logits of the own term,
// the composite key, and the re-weighting factor.
void finish(DecompositionReport& rep, const std::vector<double>& own,
            const std::vector<double>& composite, const std::vector<double>& rhs) {
  const std::size_t n = own.size();
  rep.residuals.resize(n);
  rep.max_residual = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lhs = guarded_exp(composite[i]);
    rep.residuals[i] = std::abs(lhs - rhs[i]) / lhs;
    rep.max_residual = std::max(rep.max_residual, rep.residuals[i]);
  }
  const std::vector<double> w = softmax(own);
  const std::vector<double> w_tilde = softmax(composite);
  double lo = 0.0, hi = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = w_tilde[i] / (w[i] * rep.reweighting[i]);
    lo = i == 0 ? ratio : std::min(lo, ratio);
    hi = i == 0 ? ratio : std::max(hi, ratio);
    sum += ratio;
  }
  rep.proportionality_spread = n ? (hi - lo) / (sum / static_cast<double>(n)) : 0.0;
  rep.pass = rep.max_residual < rep.tolerance;
}

}  // namespace

Tensor key_head_slice(const Tensor& w_k, std::size_t head, std::size_t head_dim) {
  if (w_k.rank() != 2 || (head + 1) * head_dim > w_k.cols()) {
    throw DimensionError("key_head_slice: head " + std::to_string(head) + " outside " +
                         shape_to_string(w_k.shape()));
  }
  Tensor out({w_k.rows(), head_dim});
  for (std::size_t r = 0; r < w_k.rows(); ++r)
    for (std::size_t c = 0; c < head_dim; ++c) out.at(r, c) = w_k.at(r, head * head_dim + c);
  return out;
}

DecompositionReport verify_cdc_decomposition(std::span<const double> query, const Tensor& w_k_head,
                                             const Tensor& prompts, const Tensor& previous,
                                             double scale, double tolerance) {
  check_inputs(query, w_k_head, prompts, previous);
  DecompositionReport rep;
  rep.kind = "cdc";
  rep.tolerance = tolerance;
  const std::size_t n = prompts.rows(), d = prompts.cols();
  std::vector<double> own(n), composite(n), rhs(n);
  std::vector<double> sum(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = row_of(prompts, i), prev = row_of(previous, i);
    for (std::size_t c = 0; c < d; ++c) sum[c] = p[c] + prev[c];
    own[i] = key_logit(query, p, w_k_head, scale);
    const double cross = key_logit(query, prev, w_k_head, scale);
    composite[i] = key_logit(query, sum, w_k_head, scale);
    const double alpha = guarded_exp(cross);
    rep.reweighting.push_back(alpha);
    rhs[i] = guarded_exp(own[i]) * alpha;
  }
  finish(rep, own, composite, rhs);
  return rep;
}

DecompositionReport verify_da_decomposition(std::span<const double> query, const Tensor& w_k_head,
                                            const Tensor& prompts, const Tensor& previous,
                                            const Tensor& gamma, double scale, double tolerance) {
  check_inputs(query, w_k_head, prompts, previous);
  const std::size_t n = prompts.rows(), d = prompts.cols();
  if (gamma.shape() != Shape{n, n}) {
    throw DimensionError("verify_da_decomposition: gamma " + shape_to_string(gamma.shape()) +
                         " for " + std::to_string(n) + " prompts");
  }
  DecompositionReport rep;
  rep.kind = "da";
  rep.tolerance = tolerance;
  std::vector<double> cross(n);
  for (std::size_t j = 0; j < n; ++j) cross[j] = key_logit(query, row_of(previous, j), w_k_head, scale);

  std::vector<double> own(n), composite(n), rhs(n);
  std::vector<double> combined(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = row_of(prompts, i);
    std::vector<double> aggregate(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const auto prev = row_of(previous, j);
      for (std::size_t c = 0; c < d; ++c) aggregate[c] += gamma.at(i, j) * prev[c];
    }
    for (std::size_t c = 0; c < d; ++c) combined[c] = p[c] + aggregate[c];
    own[i] = key_logit(query, p, w_k_head, scale);
    composite[i] = key_logit(query, combined, w_k_head, scale);

    std::vector<double> row(n);
    double product = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = guarded_exp(gamma.at(i, j) * cross[j]);
      product *= row[j];
    }
    rep.factors.push_back(std::move(row));
    rep.reweighting.push_back(product);
    rhs[i] = guarded_exp(own[i]) * product;
  }
  finish(rep, own, composite, rhs);
  return rep;
}

DecompositionReport measure_ln_path_residual(std::span<const double> query, const LayerParams& layer,
                                             std::size_t head, std::size_t head_dim,
                                             const Tensor& prompts, const Tensor& combined_previous,
                                             double scale) {
  if (prompts.shape() != combined_previous.shape()) {
    throw DimensionError("measure_ln_path_residual: prompt shapes differ");
  }
  Tape tape = Tape::no_grad();
  auto keys = [&](const Tensor& x) {
    const Tensor h = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias, 1e-6);
    return tape.add_bias(tape.matmul(h, layer.wk), layer.bk);
  };
  const Tensor k_own = keys(prompts);
  const Tensor k_prev = keys(combined_previous);
  const Tensor k_sum = keys(tape.add(prompts, combined_previous));
  auto logit = [&](const Tensor& k, std::size_t i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < head_dim; ++c) acc += query[c] * k.at(i, head * head_dim + c);
    return acc / scale;
  };
  DecompositionReport rep;
  rep.kind = "ln";
  const std::size_t n = prompts.rows();
  std::vector<double> own(n), composite(n), rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    own[i] = logit(k_own, i);
    composite[i] = logit(k_sum, i);
    const double alpha = guarded_exp(logit(k_prev, i));
    rep.reweighting.push_back(alpha);
    rhs[i] = guarded_exp(own[i]) * alpha;
  }
  finish(rep, own, composite, rhs);
  return rep;
}

std::vector<std::vector<double>> export_attention(const PromptedModel& model, const Tensor& image) {
  Tape tape = Tape::no_grad();
  const ForwardResult fwd = model.forward(tape, image);
  std::vector<std::vector<double>> rows;
  for (const AttentionRecord& rec : fwd.records) {
    rows.emplace_back(rec.cls_image_weights.values().begin(), rec.cls_image_weights.values().end());
  }
  return rows;
}

void write_attention_csv(std::ostream& out, const std::vector<std::vector<double>>& rows) {
  const std::size_t m = rows.empty() ? 0 : rows.front().size();
  out << "layer";
  for (std::size_t j = 0; j < m; ++j) out << ",slot_" << j;
  out << '\n' << std::setprecision(17);
  for (std::size_t l = 0; l < rows.size(); ++l) {
    out << l;
    for (double v : rows[l]) out << ',' << v;
    out << '\n';
  }
}

void write_attention_csv(const std::filesystem::path& path,
                         const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_attention_csv(out, rows);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace ivpt
