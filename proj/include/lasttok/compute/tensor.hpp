#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lasttok::compute {

using Shape = std::vector<std::size_t>;

/// Raised when operands of an op have incompatible shapes. The message names
/// the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Rank 1 and rank 2 are the only ranks the
/// model code uses; a scalar is shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, value); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Rows of a rank-2 tensor; 1 for rank 1.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  /// Columns of a rank-2 tensor; length for rank 1.
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double* row(std::size_t r) noexcept { return data_.data() + r * cols(); }
  const double* row(std::size_t r) const noexcept { return data_.data() + r * cols(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  bool all_finite() const noexcept;
  void fill(double value) noexcept;
  /// Elementwise this += other; shapes must match.
  void add_inplace(const Tensor& other);

  /// Rows [begin, end) of a rank-2 tensor as a new tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Shape& shape);

}  // namespace lasttok::compute
