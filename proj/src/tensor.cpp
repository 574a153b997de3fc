#include "normlab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace normlab {

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out << ", ";
    out << s[i];
  }
  out << "]";
  return out.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = value;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  Shape shape{static_cast<int64_t>(values.size())};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::identity(int64_t n) {
  Tensor t({n, n});
  for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

int64_t Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

double& Tensor::at(int64_t i) { return data_[static_cast<size_t>(i)]; }
double Tensor::at(int64_t i) const { return data_[static_cast<size_t>(i)]; }

double& Tensor::at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
double Tensor::at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

double& Tensor::at(int64_t i, int64_t j, int64_t k) {
  return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
}
double Tensor::at(int64_t i, int64_t j, int64_t k) const {
  return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a single-element tensor, got shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::detached() const {
  Tensor t(shape_, data_);
  return t;
}

}  // namespace normlab
