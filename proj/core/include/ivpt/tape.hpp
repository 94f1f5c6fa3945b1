#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ivpt/tensor.hpp"

namespace ivpt {

// Output of the fused multi-head attention kernel. `logits` and `weights` are
// [heads x T x T] side records and do not participate in differentiation.
struct AttentionOutput {
  Tensor output;
  Tensor logits;
  Tensor weights;
};

// Reverse-mode gradient tape.
//
// Every differentiable operation is a method on the tape. An operation is
// recorded only when at least one input requires a gradient; otherwise it runs
// as a plain kernel. A tape constructed with `recording = false` never records.
// Nodes are appended in execution order, so reverse iteration is a reverse
// topological order.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  static Tape no_grad() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  // [m x k] . [k x n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  // x[..., n] + bias[n] along the trailing axis.
  Tensor add_bias(const Tensor& x, const Tensor& bias);

  // Softmax over the trailing axis with max-subtraction.
  Tensor softmax(const Tensor& x);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
  // Exact (erf) GELU.
  Tensor gelu(const Tensor& x);

  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);

  // Row-block manipulation on 2-D tensors.
  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
  // Returns x with row rows[j] += delta[j]; rows must be distinct.
  Tensor add_to_rows(const Tensor& x, std::span<const std::size_t> rows, const Tensor& delta);

  // Mean cross-entropy of logits [B x C] against integer labels.
  Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

  // Multi-head scaled dot-product attention over q, k, v [T x D] with scale
  // 1/sqrt(D/heads).
  AttentionOutput multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                       std::size_t heads);

  // Propagates d(loss)/d(.) into every tensor that requires a gradient.
  // Gradients accumulate into existing buffers.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::shared_ptr<TensorData> output;
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::function<void(const TensorData& out)> backward;
  };

  bool wants_grad(std::initializer_list<const Tensor*> inputs) const;
  void record(const Tensor& out, std::vector<std::shared_ptr<TensorData>> inputs,
              std::function<void(const TensorData&)> fn);

  bool recording_ = true;
  std::vector<Node> nodes_;
};

// Named leaf tensors with a trainable flag. Trainable entries have
// requires_grad set; frozen entries never receive a gradient buffer.
class ParameterRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };

  void add(std::string name, Tensor tensor, bool trainable);
  const std::vector<Entry>& entries() const { return entries_; }
  const Entry* find(const std::string& name) const;

  std::size_t trainable_scalars() const;
  std::size_t frozen_scalars() const;
  void zero_grad();

  // FNV-1a over the raw bytes of every frozen tensor, in registration order.
  std::uint64_t frozen_hash() const;

 private:
  std::vector<Entry> entries_;
};

}  // namespace ivpt
