#include "ivpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "ivpt/error.hpp"

namespace ivpt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : data_(std::make_shared<TensorData>()) { data_->shape = {0}; }

Tensor::Tensor(Shape shape, double fill) : data_(std::make_shared<TensorData>()) {
  data_->values.assign(shape_numel(shape), fill);
  data_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : data_(std::make_shared<TensorData>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  data_->shape = std::move(shape);
  data_->values = std::move(values);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : numel() / c;
}

std::size_t Tensor::cols() const { return data_->shape.empty() ? 1 : data_->shape.back(); }

void Tensor::clear_grad() {
  data_->grad.clear();
  data_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  Tensor copy(data_->shape, data_->values);
  copy.set_requires_grad(data_->requires_grad);
  return copy;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 ||
         std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace ivpt
