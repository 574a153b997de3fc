#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace normlab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
struct DimensionError : Error { using Error::Error; };
// Invalid argument values (generator parameters, unknown variant names, ...).
struct ArgumentError : Error { using Error::Error; };
// A statistics group or masked reduction is empty, or eps makes it unusable.
struct DegenerateReductionError : Error { using Error::Error; };
// API contract violations (non-scalar backward root, mixing tapes, ...).
struct ContractError : Error { using Error::Error; };
// NaN/Inf where finite values are required.
struct NumericError : Error { using Error::Error; };
// Malformed experiment configuration.
struct ConfigError : Error { using Error::Error; };

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

class Tape;

// Dense float64 tensor, row-major. Copies are deep. A tensor may carry a
// (tape, node) binding identifying the tape node that produced its value;
// the binding is non-owning and must not outlive the tape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);
  static Tensor identity(int64_t n);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& at(int64_t i);
  double at(int64_t i) const;
  double& at(int64_t i, int64_t j);
  double at(int64_t i, int64_t j) const;
  double& at(int64_t i, int64_t j, int64_t k);
  double at(int64_t i, int64_t j, int64_t k) const;

  double item() const;  // requires size() == 1
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool tracked() const { return tape_ != nullptr; }
  void bind(Tape* tape, int node) { tape_ = tape; node_ = node; }
  void unbind() { tape_ = nullptr; node_ = -1; }
  Tensor detached() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

}  // namespace normlab
