#ifndef GLPATH_OPS_LINEAR_HPP
#define GLPATH_OPS_LINEAR_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "glpath/tensor.hpp"

namespace glpath::ops {

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

namespace detail {
template <typename T>
void check_linear_shapes(const Tensor<T>& input, const Tensor<T>& weights) {
  if (input.rank() != 2) {
    throw ShapeError("linear: input must be N x F, got " + input.shape_string());
  }
  if (weights.rank() != 2 || weights.dim(0) != input.dim(1)) {
    throw ShapeError("linear: weights " + weights.shape_string() + " do not match feature dim " +
                     std::to_string(input.dim(1)));
  }
}
}  // namespace detail

/// input (N x F) * weights (F x K) + bias (K).
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias) {
  detail::check_linear_shapes(input, weights);
  const std::size_t rows = input.dim(0), features = input.dim(1), outputs = weights.dim(1);
  if (bias.size() != outputs) {
    throw ShapeError("linear: bias length " + std::to_string(bias.size()) + ", expected " +
                     std::to_string(outputs));
  }
  Tensor<T> out({rows, outputs});
  std::vector<acc_t<T>> acc(outputs);
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t k = 0; k < outputs; ++k) acc[k] = bias[k];
    for (std::size_t f = 0; f < features; ++f) {
      const acc_t<T> x = input[n * features + f];
      const T* wrow = weights.data() + f * outputs;
      for (std::size_t k = 0; k < outputs; ++k) acc[k] += x * static_cast<acc_t<T>>(wrow[k]);
    }
    for (std::size_t k = 0; k < outputs; ++k) out[n * outputs + k] = static_cast<T>(acc[k]);
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weights) {
  detail::check_linear_shapes(input, weights);
  const std::size_t rows = input.dim(0), features = input.dim(1), outputs = weights.dim(1);
  if (grad_out.shape() != typename Tensor<T>::Shape{rows, outputs}) {
    throw ShapeError("linear backward: grad_out " + grad_out.shape_string() + ", expected [" +
                     std::to_string(rows) + "x" + std::to_string(outputs) + "]");
  }
  using A = acc_t<T>;
  LinearGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape()),
                       std::vector<T>(outputs)};
  for (std::size_t n = 0; n < rows; ++n) {
    const T* g = grad_out.data() + n * outputs;
    for (std::size_t f = 0; f < features; ++f) {
      const T* wrow = weights.data() + f * outputs;
      A s{};
      for (std::size_t k = 0; k < outputs; ++k) s += static_cast<A>(g[k]) * static_cast<A>(wrow[k]);
      grads.input[n * features + f] = static_cast<T>(s);
    }
  }
  for (std::size_t f = 0; f < features; ++f) {
    for (std::size_t k = 0; k < outputs; ++k) {
      A s{};
      for (std::size_t n = 0; n < rows; ++n) {
        s += static_cast<A>(input[n * features + f]) * static_cast<A>(grad_out[n * outputs + k]);
      }
      grads.weights[f * outputs + k] = static_cast<T>(s);
    }
  }
  for (std::size_t k = 0; k < outputs; ++k) {
    A s{};
    for (std::size_t n = 0; n < rows; ++n) s += static_cast<A>(grad_out[n * outputs + k]);
    grads.bias[k] = static_cast<T>(s);
  }
  return grads;
}

}  // namespace glpath::ops

#endif  // GLPATH_OPS_LINEAR_HPP
