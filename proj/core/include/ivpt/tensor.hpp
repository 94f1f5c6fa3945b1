#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ivpt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Storage shared between a Tensor handle and the tape nodes that reference it.
struct TensorData {
  Shape shape;
  std::vector<double> values;
  // Empty until a gradient actually flows into this tensor.
  std::vector<double> grad;
  bool requires_grad = false;
};

// Dense row-major f64 array. Copies of a Tensor share storage; use clone()
// for an independent deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->values.size(); }
  bool empty() const { return data_->values.empty(); }

  // Leading extent for rank >= 2, 1 for vectors.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const;

  std::span<const double> values() const { return data_->values; }
  std::span<double> mutable_values() { return data_->values; }
  double operator[](std::size_t i) const { return data_->values[i]; }
  double& operator[](std::size_t i) { return data_->values[i]; }
  double at(std::size_t row, std::size_t col) const { return data_->values[row * cols() + col]; }
  double& at(std::size_t row, std::size_t col) { return data_->values[row * cols() + col]; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on) { data_->requires_grad = on; }

  bool has_grad() const { return !data_->grad.empty(); }
  std::span<const double> grad() const { return data_->grad; }
  std::span<double> mutable_grad() { return data_->grad; }
  void clear_grad();

  Tensor clone() const;
  bool shares_storage(const Tensor& other) const { return data_ == other.data_; }

  const std::shared_ptr<TensorData>& data() const { return data_; }
  explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}

 private:
  std::shared_ptr<TensorData> data_;
};

// True when both tensors have equal shapes and bit-identical values.
bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ivpt
