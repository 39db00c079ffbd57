#ifndef GLPATH_TENSOR_HPP
#define GLPATH_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "glpath/error.hpp"

namespace glpath {

/// Dense row-major array of rank 1..4. Images and activations use the
/// N x C x H x W convention; parameters use whatever rank they need.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Shape = std::vector<std::size_t>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(product(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (product(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                       std::to_string(shape_.size()));
    }
    return shape_[axis];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// 4-d accessor (n, c, h, w); lower-rank tensors are padded on the left.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset4(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset4(n, c, h, w)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    } else {
      return true;
    }
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(*this, other, "tensor +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  static std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  std::string shape_string() const { return shape_string(shape_); }

  friend void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape_ != b.shape_) {
      throw ShapeError(std::string(what) + ": shape " + a.shape_string() + " vs " +
                       b.shape_string());
    }
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == 0) {
        throw ShapeError("tensor dimension " + std::to_string(i) + " is zero in " +
                         shape_string(shape));
      }
    }
  }

  std::size_t offset4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    std::size_t padded[4] = {1, 1, 1, 1};
    std::copy(shape_.begin(), shape_.end(), padded + (4 - shape_.size()));
    return ((n * padded[1] + c) * padded[2] + h) * padded[3] + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Accumulator type for reductions: always 64-bit even for 32-bit tensors.
template <typename T>
using acc_t = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

}  // namespace glpath

#endif  // GLPATH_TENSOR_HPP
