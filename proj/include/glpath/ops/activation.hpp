#ifndef GLPATH_OPS_ACTIVATION_HPP
#define GLPATH_OPS_ACTIVATION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "glpath/tensor.hpp"

namespace glpath::ops {

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{} ? input[i] : T{};
  return out;
}

/// Subgradient at exactly 0 is taken as 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
  require_same_shape(grad_out, input, "relu backward");
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{} ? grad_out[i] : T{};
  return out;
}

/// Row-wise softmax of an N x K tensor, with the row maximum subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax: logits must be N x K, got " + logits.shape_string());
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * cols;
    const double zmax = static_cast<double>(*std::max_element(z, z + cols));
    double sum = 0.0;
    for (std::size_t k = 0; k < cols; ++k) sum += std::exp(static_cast<double>(z[k]) - zmax);
    for (std::size_t k = 0; k < cols; ++k) {
      out[r * cols + k] = static_cast<T>(std::exp(static_cast<double>(z[k]) - zmax) / sum);
    }
  }
  return out;
}

}  // namespace glpath::ops

#endif  // GLPATH_OPS_ACTIVATION_HPP
