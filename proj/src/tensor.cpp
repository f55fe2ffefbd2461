#include "kge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "kge/errors.hpp"

namespace kge {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n_rows * n_cols);
  for (const auto& r : rows) {
    if (r.size() != n_cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({n_rows, n_cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return shape_[0];
  return data_.size() / std::max<std::size_t>(shape_[0], 1);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace kge
