#include "ivpt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "ivpt/error.hpp"

namespace ivpt {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
}

std::span<double> grad_of(TensorData& d) {
  if (d.grad.empty()) d.grad.assign(d.values.size(), 0.0);
  return d.grad;
}

// c[m x n] += a[m x k] . b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m x k] += g[m x n] . b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T . g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * grow[j];
    }
  }
}

}  // namespace

bool Tape::wants_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(const Tensor& out, std::vector<std::shared_ptr<TensorData>> inputs,
                  std::function<void(const TensorData&)> fn) {
  out.data()->requires_grad = true;
  nodes_.push_back(Node{out.data(), std::move(inputs), std::move(fn)});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
  check_finite(out, "matmul");
  if (wants_grad({&a, &b})) {
    TensorData* ad = a.data().get();
    TensorData* bd = b.data().get();
    record(out, {a.data(), b.data()}, [ad, bd, m, k, n](const TensorData& o) {
      if (ad->requires_grad) gemm_nt(o.grad.data(), bd->values.data(), grad_of(*ad).data(), m, k, n);
      if (bd->requires_grad) gemm_tn(ad->values.data(), o.grad.data(), grad_of(*bd).data(), m, k, n);
    });
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  if (wants_grad({&a})) {
    TensorData* ad = a.data().get();
    record(out, {a.data()}, [ad, r, c](const TensorData& o) {
      auto g = grad_of(*ad);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    });
  }
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  check_finite(out, "add");
  if (wants_grad({&a, &b})) {
    TensorData* ad = a.data().get();
    TensorData* bd = b.data().get();
    record(out, {a.data(), b.data()}, [ad, bd](const TensorData& o) {
      for (TensorData* d : {ad, bd}) {
        if (!d->requires_grad) continue;
        auto g = grad_of(*d);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  check_finite(out, "sub");
  if (wants_grad({&a, &b})) {
    TensorData* ad = a.data().get();
    TensorData* bd = b.data().get();
    record(out, {a.data(), b.data()}, [ad, bd](const TensorData& o) {
      if (ad->requires_grad) {
        auto g = grad_of(*ad);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (bd->requires_grad) {
        auto g = grad_of(*bd);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
      }
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  check_finite(out, "mul");
  if (wants_grad({&a, &b})) {
    TensorData* ad = a.data().get();
    TensorData* bd = b.data().get();
    record(out, {a.data(), b.data()}, [ad, bd](const TensorData& o) {
      if (ad->requires_grad) {
        auto g = grad_of(*ad);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bd->values[i];
      }
      if (bd->requires_grad) {
        auto g = grad_of(*bd);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ad->values[i];
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * factor;
  check_finite(out, "scale");
  if (wants_grad({&a})) {
    TensorData* ad = a.data().get();
    record(out, {a.data()}, [ad, factor](const TensorData& o) {
      auto g = grad_of(*ad);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
    });
  }
  return out;
}

Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match trailing extent of " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + bias[j];
  check_finite(out, "add_bias");
  if (wants_grad({&x, &bias})) {
    TensorData* xd = x.data().get();
    TensorData* bd = bias.data().get();
    record(out, {x.data(), bias.data()}, [xd, bd, rows, n](const TensorData& o) {
      if (xd->requires_grad) {
        auto g = grad_of(*xd);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (bd->requires_grad) {
        auto g = grad_of(*bd);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
      }
    });
  }
  return out;
}

Tensor Tape::softmax(const Tensor& x) {
  const std::size_t n = x.cols();
  const std::size_t rows = x.rows();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * n;
    double* y = out.mutable_values().data() + r * n;
    const double m = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(in[j] - m);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  check_finite(out, "softmax");
  if (wants_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* yd = out.data().get();
    record(out, {x.data()}, [xd, yd, rows, n](const TensorData& o) {
      auto g = grad_of(*xd);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = yd->values.data() + r * n;
        const double* go = o.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += go[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (go[j] - dot);
      }
    });
  }
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.cols();
  if (n == 0) throw DimensionError("layer_norm: trailing extent must be >= 1");
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias extent does not match " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  Tensor out(x.shape());
  auto normalized = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (in[j] - mean) * is;
      (*normalized)[r * n + j] = xh;
      out[r * n + j] = xh * gain[j] + bias[j];
    }
  }
  check_finite(out, "layer_norm");
  if (wants_grad({&x, &gain, &bias})) {
    TensorData* xd = x.data().get();
    TensorData* gd = gain.data().get();
    TensorData* bd = bias.data().get();
    record(out, {x.data(), gain.data(), bias.data()},
           [xd, gd, bd, normalized, inv_std, rows, n](const TensorData& o) {
             const auto& xh = *normalized;
             if (gd->requires_grad) {
               auto g = grad_of(*gd);
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j] * xh[r * n + j];
             }
             if (bd->requires_grad) {
               auto g = grad_of(*bd);
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
             }
             if (xd->requires_grad) {
               auto g = grad_of(*xd);
               const double inv_n = 1.0 / static_cast<double>(n);
               for (std::size_t r = 0; r < rows; ++r) {
                 double mean_d = 0.0, mean_dx = 0.0;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double d = o.grad[r * n + j] * gd->values[j];
                   mean_d += d;
                   mean_dx += d * xh[r * n + j];
                 }
                 mean_d *= inv_n;
                 mean_dx *= inv_n;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double d = o.grad[r * n + j] * gd->values[j];
                   g[r * n + j] += (*inv_std)[r] * (d - mean_d - xh[r * n + j] * mean_dx);
                 }
               }
             }
           });
  }
  return out;
}

Tensor Tape::gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  }
  check_finite(out, "gelu");
  if (wants_grad({&x})) {
    TensorData* xd = x.data().get();
    record(out, {x.data()}, [xd](const TensorData& o) {
      auto g = grad_of(*xd);
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xd->values[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        g[i] += o.grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out({1}, acc);
  check_finite(out, "sum");
  if (wants_grad({&x})) {
    TensorData* xd = x.data().get();
    record(out, {x.data()}, [xd](const TensorData& o) {
      auto g = grad_of(*xd);
      for (double& v : g) v += o.grad[0];
    });
  }
  return out;
}

Tensor Tape::mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_to_string(parts.front().shape()) +
                           " vs " + shape_to_string(p.shape()));
    }
    total += p.rows();
  }
  Tensor out({total, n});
  std::size_t offset = 0;
  bool any_grad = false;
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.mutable_values().begin() + offset * n);
    inputs.push_back(p.data());
    offsets.push_back(offset);
    any_grad = any_grad || p.requires_grad();
    offset += p.rows();
  }
  if (recording_ && any_grad) {
    std::vector<TensorData*> raw;
    for (const auto& d : inputs) raw.push_back(d.get());
    record(out, std::move(inputs), [raw, offsets, n](const TensorData& o) {
      for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!raw[i]->requires_grad || raw[i]->values.empty()) continue;
        auto g = grad_of(*raw[i]);
        const double* src = o.grad.data() + offsets[i] * n;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
      }
    });
  }
  return out;
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows");
  if (begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.cols();
  Tensor out({count, n});
  std::copy(x.values().begin() + begin * n, x.values().begin() + (begin + count) * n,
            out.mutable_values().begin());
  if (count > 0 && wants_grad({&x})) {
    TensorData* xd = x.data().get();
    record(out, {x.data()}, [xd, begin, count, n](const TensorData& o) {
      auto g = grad_of(*xd);
      for (std::size_t j = 0; j < count * n; ++j) g[begin * n + j] += o.grad[j];
    });
  }
  return out;
}

Tensor Tape::add_to_rows(const Tensor& x, std::span<const std::size_t> rows, const Tensor& delta) {
  require_rank2(x, "add_to_rows");
  const std::size_t n = x.cols();
  if (rows.empty()) return x;
  require_rank2(delta, "add_to_rows");
  if (delta.rows() != rows.size() || delta.cols() != n) {
    throw DimensionError("add_to_rows: delta " + shape_to_string(delta.shape()) + " for " +
                         std::to_string(rows.size()) + " rows of " + shape_to_string(x.shape()));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  {
    std::vector<std::size_t> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ContractError("add_to_rows: duplicate row index");
    }
    if (sorted.back() >= x.rows()) {
      throw DimensionError("add_to_rows: row index " + std::to_string(sorted.back()) +
                           " out of range for " + shape_to_string(x.shape()));
    }
  }
  Tensor out = Tensor(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (std::size_t c = 0; c < n; ++c) out[idx[j] * n + c] += delta[j * n + c];
  check_finite(out, "add_to_rows");
  if (wants_grad({&x, &delta})) {
    TensorData* xd = x.data().get();
    TensorData* dd = delta.data().get();
    record(out, {x.data(), delta.data()}, [xd, dd, idx, n](const TensorData& o) {
      if (xd->requires_grad) {
        auto g = grad_of(*xd);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (dd->requires_grad) {
        auto g = grad_of(*dd);
        for (std::size_t j = 0; j < idx.size(); ++j)
          for (std::size_t c = 0; c < n; ++c) g[j * n + c] += o.grad[idx[j] * n + c];
      }
    });
  }
  return out;
}

Tensor Tape::cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank2(logits, "cross_entropy");
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_to_string(logits.shape()));
  }
  if (b == 0) throw ContractError("cross_entropy: empty batch");
  auto probs = std::make_shared<std::vector<double>>(b * c);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= c) throw ContractError("cross_entropy: label out of range");
    const double* in = logits.values().data() + r * c;
    const double m = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      (*probs)[r * c + j] = std::exp(in[j] - m);
      z += (*probs)[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= z;
    total += (m + std::log(z)) - in[labels[r]];
  }
  Tensor out({1}, total / static_cast<double>(b));
  check_finite(out, "cross_entropy");
  if (wants_grad({&logits})) {
    TensorData* ld = logits.data().get();
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    record(out, {logits.data()}, [ld, probs, lab, b, c](const TensorData& o) {
      auto g = grad_of(*ld);
      const double s = o.grad[0] / static_cast<double>(b);
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < c; ++j)
          g[r * c + j] += s * ((*probs)[r * c + j] - (j == lab[r] ? 1.0 : 0.0));
    });
  }
  return out;
}

AttentionOutput Tape::multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                           std::size_t heads) {
  require_rank2(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t t = q.rows(), d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionOutput res{Tensor({t, d}), Tensor({heads, t, t}), Tensor({heads, t, t})};
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();
  double* lg = res.logits.mutable_values().data();
  double* wt = res.weights.mutable_values().data();
  double* ov = res.output.mutable_values().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t; ++i) {
      double* lrow = lg + (h * t + i) * t;
      double* wrow = wt + (h * t + i) * t;
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qv[i * d + off + c] * kv[j * d + off + c];
        lrow[j] = acc * inv_scale;
      }
      const double m = *std::max_element(lrow, lrow + t);
      double z = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        wrow[j] = std::exp(lrow[j] - m);
        z += wrow[j];
      }
      for (std::size_t j = 0; j < t; ++j) wrow[j] /= z;
      for (std::size_t j = 0; j < t; ++j) {
        const double w = wrow[j];
        for (std::size_t c = 0; c < dh; ++c) ov[i * d + off + c] += w * vv[j * d + off + c];
      }
    }
  }
  check_finite(res.output, "attention");
  check_finite(res.logits, "attention");

  if (wants_grad({&q, &k, &v})) {
    TensorData* qd = q.data().get();
    TensorData* kd = k.data().get();
    TensorData* vd = v.data().get();
    std::shared_ptr<TensorData> wd = res.weights.data();
    record(res.output, {q.data(), k.data(), v.data()},
           [qd, kd, vd, wd, heads, t, d, dh, inv_scale](const TensorData& o) {
             const double* w = wd->values.data();
             const double* go = o.grad.data();
             double* gq = qd->requires_grad ? grad_of(*qd).data() : nullptr;
             double* gk = kd->requires_grad ? grad_of(*kd).data() : nullptr;
             double* gv = vd->requires_grad ? grad_of(*vd).data() : nullptr;
             std::vector<double> dw(t), dl(t);
             for (std::size_t h = 0; h < heads; ++h) {
               const std::size_t off = h * dh;
               for (std::size_t i = 0; i < t; ++i) {
                 const double* wrow = w + (h * t + i) * t;
                 const double* grow = go + i * d + off;
                 for (std::size_t j = 0; j < t; ++j) {
                   double acc = 0.0;
                   for (std::size_t c = 0; c < dh; ++c) acc += grow[c] * vd->values[j * d + off + c];
                   dw[j] = acc;
                   if (gv) {
                     for (std::size_t c = 0; c < dh; ++c) gv[j * d + off + c] += wrow[j] * grow[c];
                   }
                 }
                 double dot = 0.0;
                 for (std::size_t j = 0; j < t; ++j) dot += wrow[j] * dw[j];
                 for (std::size_t j = 0; j < t; ++j) dl[j] = wrow[j] * (dw[j] - dot) * inv_scale;
                 if (gq) {
                   for (std::size_t j = 0; j < t; ++j)
                     for (std::size_t c = 0; c < dh; ++c)
                       gq[i * d + off + c] += dl[j] * kd->values[j * d + off + c];
                 }
                 if (gk) {
                   for (std::size_t j = 0; j < t; ++j)
                     for (std::size_t c = 0; c < dh; ++c)
                       gk[j * d + off + c] += dl[j] * qd->values[i * d + off + c];
                 }
               }
             }
           });
  }
  return res;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor requiring a gradient");
  }
  grad_of(*loss.data())[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
}

void ParameterRegistry::add(std::string name, Tensor tensor, bool trainable) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter name: " + name);
  tensor.set_requires_grad(trainable);
  if (!trainable) tensor.clear_grad();
  entries_.push_back(Entry{std::move(name), std::move(tensor), trainable});
}

const ParameterRegistry::Entry* ParameterRegistry::find(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

std::size_t ParameterRegistry::trainable_scalars() const {
  std::size_t n = 0;
  for (const Entry& e : entries_)
    if (e.trainable) n += e.tensor.numel();
  return n;
}

std::size_t ParameterRegistry::frozen_scalars() const {
  std::size_t n = 0;
  for (const Entry& e : entries_)
    if (!e.trainable) n += e.tensor.numel();
  return n;
}

void ParameterRegistry::zero_grad() {
  for (Entry& e : entries_) {
    if (!e.trainable) continue;
    auto g = e.tensor.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

std::uint64_t ParameterRegistry::frozen_hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const Entry& e : entries_) {
    if (e.trainable) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(e.tensor.values().data());
    for (std::size_t i = 0; i < e.tensor.numel() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace ivpt
