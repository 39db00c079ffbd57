#ifndef GLPATH_OPS_POOL_HPP
#define GLPATH_OPS_POOL_HPP

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "glpath/ops/conv.hpp"
#include "glpath/tensor.hpp"

namespace glpath::ops {

struct PoolSpec {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
};

/// Max pooling output plus, for every output cell, the flat input index of
/// the winning element. Padding behaves as -inf so it never wins; among equal
/// maxima the lowest flat index wins.
template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool2d(const Tensor<T>& input, const PoolSpec& spec = {}) {
  if (input.rank() != 4) {
    throw ShapeError("maxpool: input must be rank 4, got " + input.shape_string());
  }
  if (spec.padding * 2 > spec.kernel) {
    throw ShapeError("maxpool: padding " + std::to_string(spec.padding) +
                     " exceeds half the kernel " + std::to_string(spec.kernel));
  }
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  const std::size_t out_h = ConvSpec::output_extent(height, spec.kernel, spec.stride, spec.padding);
  const std::size_t out_w = ConvSpec::output_extent(width, spec.kernel, spec.stride, spec.padding);

  MaxPoolResult<T> result{Tensor<T>({batch, channels, out_h, out_w}), {}};
  result.argmax.resize(result.output.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < batch * channels; ++nc) {
    const std::size_t base = nc * height * width;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_index = std::numeric_limits<std::size_t>::max();
        // Row-major window scan with strict '>' keeps the lowest index on ties.
        for (std::size_t ki = 0; ki < spec.kernel; ++ki) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec.stride + ki) -
                                    static_cast<std::ptrdiff_t>(spec.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec.stride + kj) -
                                      static_cast<std::ptrdiff_t>(spec.padding);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) continue;
            const std::size_t idx = base + static_cast<std::size_t>(ih) * width +
                                    static_cast<std::size_t>(iw);
            if (best_index == std::numeric_limits<std::size_t>::max() || input[idx] > best) {
              best = input[idx];
              best_index = idx;
            }
          }
        }
        result.output[o] = best;
        result.argmax[o] = best_index;
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const typename Tensor<T>::Shape& input_shape) {
  if (grad_out.size() != argmax.size()) {
    throw ShapeError("maxpool backward: grad_out has " + std::to_string(grad_out.size()) +
                     " elements, argmax has " + std::to_string(argmax.size()));
  }
  std::vector<acc_t<T>> acc(Tensor<T>::product(input_shape), acc_t<T>{});
  for (std::size_t o = 0; o < argmax.size(); ++o) acc[argmax[o]] += grad_out[o];
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) grad[i] = static_cast<T>(acc[i]);
  return grad;
}

/// Per-(n, c) spatial mean; output N x C x 1 x 1.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) {
    throw ShapeError("global_avg_pool: input must be rank 4, got " + input.shape_string());
  }
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  Tensor<T> out({batch, channels, 1, 1});
  for (std::size_t nc = 0; nc < batch * channels; ++nc) {
    acc_t<T> sum{};
    const T* x = input.data() + nc * plane;
    for (std::size_t i = 0; i < plane; ++i) sum += x[i];
    out[nc] = static_cast<T>(sum / static_cast<acc_t<T>>(plane));
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out,
                                   const typename Tensor<T>::Shape& input_shape) {
  if (input_shape.size() != 4 || grad_out.size() != input_shape[0] * input_shape[1]) {
    throw ShapeError("global_avg_pool backward: grad_out " + grad_out.shape_string() +
                     " does not match input " + Tensor<T>::shape_string(input_shape));
  }
  const std::size_t plane = input_shape[2] * input_shape[3];
  Tensor<T> grad(input_shape);
  for (std::size_t nc = 0; nc < grad_out.size(); ++nc) {
    const T share = static_cast<T>(static_cast<acc_t<T>>(grad_out[nc]) /
                                   static_cast<acc_t<T>>(plane));
    T* g = grad.data() + nc * plane;
    for (std::size_t i = 0; i < plane; ++i) g[i] = share;
  }
  return grad;
}

}  // namespace glpath::ops

#endif  // GLPATH_OPS_POOL_HPP
