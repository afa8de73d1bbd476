#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace grail {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_product(const Shape& shape);

/// Dense row-major tensor of rank 1..4 holding 64-bit reals.
///
/// A default-constructed tensor is the empty placeholder (rank 0, no data);
/// every other tensor satisfies product(shape) == size() with all dims >= 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor identity(std::size_t n);
  static Tensor vector(std::vector<double> values);
  /// Rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  [[nodiscard]] bool empty() const { return shape_.empty(); }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  /// Rank-2 accessors; throw DimensionError on other ranks.
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;

  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  [[nodiscard]] std::span<double> row(std::size_t i);
  [[nodiscard]] std::span<const double> row(std::size_t i) const;

  /// Same data under a new shape of equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const;
  /// View as (dim0 x rest); rank-1 tensors become a single row.
  [[nodiscard]] Tensor as_matrix() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

/// Element-wise maximum absolute difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double frobenius_norm(const Tensor& a);

}  // namespace grail
