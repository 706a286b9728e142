#include "vcem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vcem::diff {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

static void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_))
    throw ShapeError("tensor " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(values_.size()));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

void Tensor::bad_rank(const char* what) const {
  throw ShapeError(std::string(what) + "() on rank-" + std::to_string(rank()) + " tensor");
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size())
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  Tensor out(std::move(shape), values_);
  out.requires_grad_ = requires_grad_;
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

}  // namespace vcem::diff
