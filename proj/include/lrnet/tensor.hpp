#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lrnet {

#ifdef LRNET_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major N-dimensional array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> data);
  Tensor(Shape shape, std::initializer_list<Real> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  Real* ptr() noexcept { return data_.data(); }
  const Real* ptr() const noexcept { return data_.data(); }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Bounds-checked multi-index access.
  Real& at(std::initializer_list<std::size_t> index);
  Real at(std::initializer_list<std::size_t> index) const;

  /// Reinterprets the shape; element count must be preserved.
  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;

  void fill(Real value);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<Real> data_;
};

/// Throws DimensionError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

Real sum(const Tensor& t);
Real mean(const Tensor& t);
Tensor transpose2d(const Tensor& t);

}  // namespace lrnet
