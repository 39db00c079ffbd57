#ifndef GLPATH_OPS_BATCHNORM_HPP
#define GLPATH_OPS_BATCHNORM_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "glpath/tensor.hpp"

namespace glpath::ops {

enum class Mode { Training, Inference };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Non-owning view of one batch-norm layer. Training mode writes the updated
/// running statistics through the `*_update` spans, which usually alias the
/// read spans; inference mode leaves them untouched and they may be empty.
template <typename T>
struct BatchNormRef {
  std::span<const T> gamma;
  std::span<const T> beta;
  std::span<const T> running_mean;
  std::span<const T> running_var;
  std::span<T> running_mean_update = {};
  std::span<T> running_var_update = {};
  double momentum = kBatchNormMomentum;
  double epsilon = kBatchNormEpsilon;
};

/// Owning per-channel batch-norm state: gamma=1, beta=0, mean=0, var=1.
template <typename T>
struct BatchNormState {
  explicit BatchNormState(std::size_t channels)
      : gamma(channels, T{1}), beta(channels, T{0}), running_mean(channels, T{0}),
        running_var(channels, T{1}) {}

  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = kBatchNormMomentum;
  double epsilon = kBatchNormEpsilon;

  BatchNormRef<T> ref() {
    return BatchNormRef<T>{gamma,        beta,        running_mean, running_var,
                           running_mean, running_var, momentum,     epsilon};
  }
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::Inference;
  Tensor<T> normalized;           // x_hat
  std::vector<double> inv_std;    // 1 / sqrt(var + eps), per channel
  std::vector<T> gamma;           // copy so the cache outlives parameter updates
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

/// Training mode normalizes with biased batch variance and updates the
/// running statistics as running = (1 - m) * running + m * batch, where the
/// running variance uses the unbiased estimate. Inference mode uses the
/// running statistics.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const BatchNormRef<T>& state, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
  if (input.rank() != 4) {
    throw ShapeError("batchnorm: input must be rank 4, got " + input.shape_string());
  }
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (state.gamma.size() != channels || state.beta.size() != channels ||
      state.running_mean.size() != channels || state.running_var.size() != channels) {
    throw ShapeError("batchnorm: parameter length " + std::to_string(state.gamma.size()) +
                     " does not match channel dim " + std::to_string(channels));
  }
  if (mode == Mode::Training && batch < 2) {
    throw ShapeError("batchnorm: training mode needs batch size >= 2, got " +
                     std::to_string(batch));
  }
  if (mode == Mode::Training && (state.running_mean_update.size() != channels ||
                                 state.running_var_update.size() != channels)) {
    throw ShapeError("batchnorm: training mode needs writable running statistics");
  }
  const std::size_t count = batch * plane;

  Tensor<T> output(input.shape());
  Tensor<T> normalized;
  if (cache) normalized = Tensor<T>(input.shape());
  std::vector<double> inv_std(channels);

  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::Training) {
      double sum = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* x = input.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += static_cast<double>(x[i]);
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* x = input.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(x[i]) - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      const double m = state.momentum;
      state.running_mean_update[c] =
          static_cast<T>((1.0 - m) * static_cast<double>(state.running_mean[c]) + m * mean);
      state.running_var_update[c] =
          static_cast<T>((1.0 - m) * static_cast<double>(state.running_var[c]) + m * unbiased);
    } else {
      mean = static_cast<double>(state.running_mean[c]);
      var = static_cast<double>(state.running_var[c]);
    }
    const double istd = 1.0 / std::sqrt(var + state.epsilon);
    inv_std[c] = istd;
    const double g = static_cast<double>(state.gamma[c]);
    const double b = static_cast<double>(state.beta[c]);
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      const T* x = input.data() + off;
      T* y = output.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (static_cast<double>(x[i]) - mean) * istd;
        if (cache) normalized[off + i] = static_cast<T>(xh);
        y[i] = static_cast<T>(g * xh + b);
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->gamma.assign(state.gamma.begin(), state.gamma.end());
  }
  return output;
}

/// Chain rule through the batch statistics (training) or through the fixed
/// affine map (inference).
template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache) {
  require_same_shape(grad_out, cache.normalized, "batchnorm backward");
  const std::size_t batch = grad_out.dim(0), channels = grad_out.dim(1);
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(batch * plane);

  BatchNormGrads<T> grads{Tensor<T>(grad_out.shape()), std::vector<T>(channels),
                          std::vector<T>(channels)};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double g = static_cast<double>(grad_out[off + i]);
        sum_g += g;
        sum_gx += g * static_cast<double>(cache.normalized[off + i]);
      }
    }
    grads.beta[c] = static_cast<T>(sum_g);
    grads.gamma[c] = static_cast<T>(sum_gx);
    const double scale = static_cast<double>(cache.gamma[c]) * cache.inv_std[c];
    const double mean_g = sum_g / count, mean_gx = sum_gx / count;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double g = static_cast<double>(grad_out[off + i]);
        double gi;
        if (cache.mode == Mode::Training) {
          const double xh = static_cast<double>(cache.normalized[off + i]);
          gi = scale * (g - mean_g - xh * mean_gx);
        } else {
          gi = scale * g;
        }
        grads.input[off + i] = static_cast<T>(gi);
      }
    }
  }
  return grads;
}

}  // namespace glpath::ops

#endif  // GLPATH_OPS_BATCHNORM_HPP
