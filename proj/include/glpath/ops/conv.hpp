#ifndef GLPATH_OPS_CONV_HPP
#define GLPATH_OPS_CONV_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "glpath/tensor.hpp"

namespace glpath::ops {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvSpec square(std::size_t in, std::size_t out, std::size_t kernel,
                         std::size_t stride, std::size_t padding) {
    return ConvSpec{in, out, kernel, kernel, stride, padding};
  }

  /// floor((in + 2p - k) / s) + 1, rejected when the window never fits.
  static std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t padding) {
    if (stride == 0 || kernel == 0) throw ShapeError("conv: kernel and stride must be positive");
    if (in + 2 * padding < kernel) {
      throw ShapeError("conv: padded input extent " + std::to_string(in + 2 * padding) +
                       " smaller than kernel " + std::to_string(kernel));
    }
    return (in + 2 * padding - kernel) / stride + 1;
  }

  std::size_t out_h(std::size_t in_h) const { return output_extent(in_h, kernel_h, stride, padding); }
  std::size_t out_w(std::size_t in_w) const { return output_extent(in_w, kernel_w, stride, padding); }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

namespace detail {

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
  if (input.rank() != 4) {
    throw ShapeError("conv: input must be rank 4 (NxCxHxW), got " + input.shape_string());
  }
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError("conv: input channel dim is " + std::to_string(input.dim(1)) +
                     ", expected in_channels " + std::to_string(spec.in_channels));
  }
  const typename Tensor<T>::Shape expected = {spec.out_channels, spec.in_channels, spec.kernel_h,
                                     spec.kernel_w};
  if (weights.shape() != expected) {
    throw ShapeError("conv: weights shape " + weights.shape_string() + ", expected " +
                     Tensor<T>::shape_string(expected));
  }
}

// col has patch_size() rows and out_h*out_w columns.
template <typename T>
void im2col(const T* image, std::size_t height, std::size_t width, const ConvSpec& spec,
            std::size_t out_h, std::size_t out_w, T* col) {
  const std::size_t positions = out_h * out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.in_channels; ++c) {
    const T* plane = image + c * height * width;
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj, ++row) {
        T* dst = col + row * positions;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec.stride + ki) -
                                    static_cast<std::ptrdiff_t>(spec.padding);
          T* out_row = dst + oh * out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) {
            for (std::size_t ow = 0; ow < out_w; ++ow) out_row[ow] = T{};
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec.stride + kj) -
                                      static_cast<std::ptrdiff_t>(spec.padding);
            out_row[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width))
                              ? T{}
                              : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

template <typename A, typename T>
void col2im_add(const A* col, std::size_t height, std::size_t width, const ConvSpec& spec,
                std::size_t out_h, std::size_t out_w, A* image) {
  const std::size_t positions = out_h * out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.in_channels; ++c) {
    A* plane = image + c * height * width;
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj, ++row) {
        const A* src = col + row * positions;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec.stride + ki) -
                                    static_cast<std::ptrdiff_t>(spec.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          A* dst = plane + static_cast<std::size_t>(ih) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec.stride + kj) -
                                      static_cast<std::ptrdiff_t>(spec.padding);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) continue;
            dst[static_cast<std::size_t>(iw)] += src[oh * out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) with zero padding. `bias` is either
/// empty or holds one value per output channel.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         std::span<const T> bias, const ConvSpec& spec) {
  detail::check_conv_shapes(input, weights, spec);
  if (!bias.empty() && bias.size() != spec.out_channels) {
    throw ShapeError("conv: bias length " + std::to_string(bias.size()) +
                     ", expected out_channels " + std::to_string(spec.out_channels));
  }
  using A = acc_t<T>;
  const std::size_t batch = input.dim(0), height = input.dim(2), width = input.dim(3);
  const std::size_t out_h = spec.out_h(height), out_w = spec.out_w(width);
  const std::size_t positions = out_h * out_w, patch = spec.patch_size();

  Tensor<T> output({batch, spec.out_channels, out_h, out_w});
  std::vector<T> col(patch * positions);
  std::vector<A> acc(positions);
  const T* w = weights.data();
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(input.data() + n * spec.in_channels * height * width, height, width, spec,
                   out_h, out_w, col.data());
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      const A b = bias.empty() ? A{} : static_cast<A>(bias[oc]);
      std::fill(acc.begin(), acc.end(), b);
      const T* wrow = w + oc * patch;
      for (std::size_t k = 0; k < patch; ++k) {
        const A wk = static_cast<A>(wrow[k]);
        const T* crow = col.data() + k * positions;
        for (std::size_t p = 0; p < positions; ++p) acc[p] += wk * static_cast<A>(crow[p]);
      }
      T* dst = output.data() + (n * spec.out_channels + oc) * positions;
      for (std::size_t p = 0; p < positions; ++p) dst[p] = static_cast<T>(acc[p]);
    }
  }
  return output;
}

/// Gradients of <grad_out, conv2d_forward(input, weights, bias)> with respect
/// to input, weights and bias.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights, const ConvSpec& spec) {
  detail::check_conv_shapes(input, weights, spec);
  using A = acc_t<T>;
  const std::size_t batch = input.dim(0), height = input.dim(2), width = input.dim(3);
  const std::size_t out_h = spec.out_h(height), out_w = spec.out_w(width);
  const typename Tensor<T>::Shape out_shape = {batch, spec.out_channels, out_h, out_w};
  if (grad_out.shape() != out_shape) {
    throw ShapeError("conv backward: grad_out shape " + grad_out.shape_string() +
                     ", expected " + Tensor<T>::shape_string(out_shape));
  }
  const std::size_t positions = out_h * out_w, patch = spec.patch_size();
  const std::size_t image_size = spec.in_channels * height * width;

  std::vector<T> col(patch * positions);
  std::vector<A> grad_col(patch * positions);
  std::vector<A> grad_image(image_size);
  std::vector<A> grad_w(spec.out_channels * patch, A{});
  std::vector<A> grad_b(spec.out_channels, A{});

  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape()),
                     std::vector<T>(spec.out_channels)};
  const T* w = weights.data();
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(input.data() + n * image_size, height, width, spec, out_h, out_w, col.data());
    std::fill(grad_col.begin(), grad_col.end(), A{});
    const T* go = grad_out.data() + n * spec.out_channels * positions;
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      const T* go_row = go + oc * positions;
      A bsum{};
      for (std::size_t p = 0; p < positions; ++p) bsum += static_cast<A>(go_row[p]);
      grad_b[oc] += bsum;
      const T* wrow = w + oc * patch;
      A* gw_row = grad_w.data() + oc * patch;
      for (std::size_t k = 0; k < patch; ++k) {
        const T* crow = col.data() + k * positions;
        A* gcrow = grad_col.data() + k * positions;
        const A wk = static_cast<A>(wrow[k]);
        A dot{};
        for (std::size_t p = 0; p < positions; ++p) {
          const A g = static_cast<A>(go_row[p]);
          dot += g * static_cast<A>(crow[p]);
          gcrow[p] += wk * g;
        }
        gw_row[k] += dot;
      }
    }
    std::fill(grad_image.begin(), grad_image.end(), A{});
    detail::col2im_add<A, T>(grad_col.data(), height, width, spec, out_h, out_w,
                             grad_image.data());
    T* gi = grads.input.data() + n * image_size;
    for (std::size_t i = 0; i < image_size; ++i) gi[i] = static_cast<T>(grad_image[i]);
  }
  for (std::size_t i = 0; i < grad_w.size(); ++i) grads.weights[i] = static_cast<T>(grad_w[i]);
  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) grads.bias[oc] = static_cast<T>(grad_b[oc]);
  return grads;
}

}  // namespace glpath::ops

#endif  // GLPATH_OPS_CONV_HPP
