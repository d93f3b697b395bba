#include "lasttok/compute/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lasttok::compute {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto s : shape_) {
    if (s == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item: expected one element, got shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_inplace(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("add_inplace: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() != 2 || begin >= end || end > rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_string(shape_));
  }
  const auto c = cols();
  return Tensor({end - begin, c}, std::vector<double>(data_.begin() + begin * c, data_.begin() + end * c));
}

}  // namespace lasttok::compute
