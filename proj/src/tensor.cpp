#include "lrnet/tensor.hpp"

#include <cmath>
#include <numeric>

#include "lrnet/errors.hpp"

namespace lrnet {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<Real> data)
    : Tensor(std::move(shape), std::vector<Real>(data)) {}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " does not match shape " +
                         shape_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw DimensionError("index " + std::to_string(i) + " out of bounds on axis " + std::to_string(axis) +
                           " of shape " + shape_string(shape_));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

Real& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
Real Tensor::at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(context) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Real sum(const Tensor& t) {
  Real s = 0;
  for (Real v : t.data()) s += v;
  return s;
}

Real mean(const Tensor& t) { return t.empty() ? Real(0) : sum(t) / static_cast<Real>(t.size()); }

Tensor transpose2d(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("transpose2d expects a matrix, got " + shape_string(t.shape()));
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  Tensor out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = t[r * cols + c];
  }
  return out;
}

}  // namespace lrnet
