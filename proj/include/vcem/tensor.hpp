#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vcem::diff {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents do not conform to a primitive.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a primitive produces NaN or infinity from finite inputs.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles. Every extent is positive and the number
/// of stored values equals the product of the extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Rows/cols of a rank-2 tensor; rank-1 tensors read as a single row.
  std::size_t rows() const {
    if (shape_.size() == 1) return 1;
    if (shape_.size() != 2) bad_rank("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    if (shape_.size() == 1) return shape_[0];
    if (shape_.size() != 2) bad_rank("cols");
    return shape_[1];
  }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  /// Same values under different extents; the element count must match.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  void fill(double value);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  [[noreturn]] void bad_rank(const char* what) const;
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

std::size_t shape_size(const Shape& shape);

}  // namespace vcem::diff
