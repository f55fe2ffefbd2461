#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace kge {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major tensor of doubles. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor vector(std::initializer_list<double> values);
  // Rows given as nested lists; every row must have the same length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  // Matrix views: rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  void fill(double value);
  // Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// Throws DimensionError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace kge
