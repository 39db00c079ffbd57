#ifndef GLPATH_MODEL_HPP
#define GLPATH_MODEL_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "glpath/error.hpp"
#include "glpath/ops/activation.hpp"
#include "glpath/ops/batchnorm.hpp"
#include "glpath/ops/conv.hpp"
#include "glpath/ops/linear.hpp"
#include "glpath/ops/pool.hpp"
#include "glpath/rng.hpp"
#include "glpath/tensor.hpp"

namespace glpath {

using ops::Mode;

/// ResNet-18 geometry. The default (512 input, stride-2 stem) puts the stem
/// output at 256 x 256.
struct ArchitectureConfig {
  std::size_t input_size = 512;
  std::size_t input_channels = 3;
  std::size_t base_channels = 64;
  std::vector<std::size_t> blocks_per_stage = {2, 2, 2, 2};
  std::size_t num_classes = 6;
  bool include_stem_maxpool = true;

  /// Number of halvings from input to the last stage.
  std::size_t halvings() const {
    return 1 + (include_stem_maxpool ? 1 : 0) +
           (blocks_per_stage.empty() ? 0 : blocks_per_stage.size() - 1);
  }

  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
  std::size_t feature_dim() const { return stage_channels(blocks_per_stage.size() - 1); }

  void validate() const {
    if (input_channels == 0) throw ConfigError("architecture: input_channels must be positive");
    if (base_channels == 0) throw ConfigError("architecture: base_channels must be positive");
    if (num_classes < 2) {
      throw ConfigError("architecture: num_classes must be >= 2, got " +
                        std::to_string(num_classes));
    }
    if (blocks_per_stage.empty()) throw ConfigError("architecture: at least one stage required");
    for (std::size_t b : blocks_per_stage) {
      if (b == 0) throw ConfigError("architecture: every stage needs at least one block");
    }
    const std::size_t divisor = std::size_t{1} << halvings();
    if (input_size == 0 || input_size % divisor != 0) {
      throw ConfigError("architecture: input_size " + std::to_string(input_size) +
                        " must be a positive multiple of " + std::to_string(divisor));
    }
  }

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

struct ResidualBlockSpec {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t stride;

  bool has_projection() const { return stride != 1 || in_channels != out_channels; }
};

/// Ordered name -> tensor map. Iteration order is insertion order, which for
/// model parameters is the canonical layer order.
template <typename T>
class TensorMap {
 public:
  void add(std::string name, Tensor<T> tensor) {
    if (index_.count(name)) throw ConfigError("duplicate tensor name '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(tensor));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor<T>& at(const std::string& name) const { return tensors_[lookup(name)]; }

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& tensor(std::size_t i) const { return tensors_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  friend bool operator==(const TensorMap& a, const TensorMap& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no tensor named '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters plus batch-norm running statistics.
template <typename T>
using ModelParams = TensorMap<T>;

/// Gradients keyed like ModelParams, without the running statistics.
template <typename T>
using Gradients = TensorMap<T>;

/// Running statistics are buffers, not trainable parameters.
inline bool is_buffer(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

/// Canonical names follow the layout
///   conv1.weight, bn1.{weight,bias,running_mean,running_var}
///   layer<S>.<B>.conv{1,2}.weight, layer<S>.<B>.bn{1,2}.*
///   layer<S>.<B>.downsample.0.weight, layer<S>.<B>.downsample.1.*
///   fc.weight (features x classes), fc.bias
/// with S counted from 1 and B from 0. Convolutions carry no bias.
using ParamSchema = std::vector<std::pair<std::string, std::vector<std::size_t>>>;

namespace detail {
inline void add_bn_schema(ParamSchema& schema, const std::string& prefix, std::size_t channels) {
  for (const char* field : {"weight", "bias", "running_mean", "running_var"}) {
    schema.emplace_back(prefix + "." + field, std::vector<std::size_t>{channels});
  }
}

inline std::string block_prefix(std::size_t stage, std::size_t block) {
  return "layer" + std::to_string(stage + 1) + "." + std::to_string(block);
}
}  // namespace detail

inline std::vector<std::vector<ResidualBlockSpec>> block_specs(const ArchitectureConfig& config) {
  std::vector<std::vector<ResidualBlockSpec>> stages;
  std::size_t in = config.base_channels;
  for (std::size_t s = 0; s < config.blocks_per_stage.size(); ++s) {
    const std::size_t out = config.stage_channels(s);
    std::vector<ResidualBlockSpec> blocks;
    for (std::size_t b = 0; b < config.blocks_per_stage[s]; ++b) {
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      blocks.push_back({in, out, stride});
      in = out;
    }
    stages.push_back(std::move(blocks));
  }
  return stages;
}

inline ParamSchema parameter_schema(const ArchitectureConfig& config) {
  config.validate();
  ParamSchema schema;
  const std::size_t base = config.base_channels;
  schema.emplace_back("conv1.weight", std::vector<std::size_t>{base, config.input_channels, 7, 7});
  detail::add_bn_schema(schema, "bn1", base);
  const auto stages = block_specs(config);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t b = 0; b < stages[s].size(); ++b) {
      const auto& spec = stages[s][b];
      const std::string p = detail::block_prefix(s, b);
      schema.emplace_back(p + ".conv1.weight",
                          std::vector<std::size_t>{spec.out_channels, spec.in_channels, 3, 3});
      detail::add_bn_schema(schema, p + ".bn1", spec.out_channels);
      schema.emplace_back(p + ".conv2.weight",
                          std::vector<std::size_t>{spec.out_channels, spec.out_channels, 3, 3});
      detail::add_bn_schema(schema, p + ".bn2", spec.out_channels);
      if (spec.has_projection()) {
        schema.emplace_back(p + ".downsample.0.weight",
                            std::vector<std::size_t>{spec.out_channels, spec.in_channels, 1, 1});
        detail::add_bn_schema(schema, p + ".downsample.1", spec.out_channels);
      }
    }
  }
  schema.emplace_back("fc.weight", std::vector<std::size_t>{config.feature_dim(), config.num_classes});
  schema.emplace_back("fc.bias", std::vector<std::size_t>{config.num_classes});
  return schema;
}

/// He-normal conv/linear weights (std sqrt(2 / fan_in)), gamma 1, beta 0,
/// running mean 0, running var 1, head bias 0. Tensors are drawn in schema
/// order from one stream, so a seed fixes every value.
template <typename T>
ModelParams<T> build(const ArchitectureConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams<T> params;
  for (auto& [name, shape] : parameter_schema(config)) {
    Tensor<T> t(shape);
    auto ends_with = [&](const std::string& s) {
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    const bool is_fc = name.rfind("fc.", 0) == 0;
    if (ends_with(".weight") && (shape.size() == 4 || is_fc)) {
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
    } else if (ends_with(".weight") || ends_with(".running_var")) {
      t.fill(T{1});
    }
    params.add(name, std::move(t));
  }
  return params;
}

/// Rejects a parameter map whose names, order or shapes differ from the
/// schema generated by `config`.
template <typename T>
void validate_params(const ArchitectureConfig& config, const ModelParams<T>& params) {
  const ParamSchema schema = parameter_schema(config);
  if (schema.size() != params.size()) {
    throw ShapeError("parameter schema mismatch: expected " + std::to_string(schema.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (params.name(i) != schema[i].first) {
      throw ShapeError("parameter schema mismatch at index " + std::to_string(i) + ": expected '" +
                       schema[i].first + "', got '" + params.name(i) + "'");
    }
    if (params.tensor(i).shape() != schema[i].second) {
      throw ShapeError("parameter '" + params.name(i) + "' has shape " +
                       params.tensor(i).shape_string() + ", expected " +
                       Tensor<T>::shape_string(schema[i].second));
    }
  }
}

/// Trainable parameter count (running statistics excluded).
template <typename T>
std::size_t parameter_count(const ModelParams<T>& params) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_buffer(params.name(i))) total += params.tensor(i).size();
  }
  return total;
}

template <typename T>
struct BlockCache {
  Tensor<T> input;
  ops::BatchNormCache<T> bn1;
  Tensor<T> bn1_out;
  Tensor<T> relu1_out;
  ops::BatchNormCache<T> bn2;
  ops::BatchNormCache<T> down_bn;
  Tensor<T> pre_activation;
};

template <typename T>
struct ForwardCache {
  Mode mode = Mode::Inference;
  Tensor<T> input;
  ops::BatchNormCache<T> stem_bn;
  Tensor<T> stem_bn_out;
  typename Tensor<T>::Shape pool_input_shape;
  std::vector<std::size_t> pool_argmax;
  std::vector<BlockCache<T>> blocks;
  typename Tensor<T>::Shape gap_input_shape;
  Tensor<T> features;  // N x F head input
};

namespace detail {

// Reads batch-norm parameters from `params`; in training mode the running
// statistics are written to `stats_out`, which may alias `params`.
template <typename T>
ops::BatchNormRef<T> bn_ref(const ModelParams<T>& params, ModelParams<T>* stats_out,
                            const std::string& prefix) {
  ops::BatchNormRef<T> ref;
  ref.gamma = params.at(prefix + ".weight").values();
  ref.beta = params.at(prefix + ".bias").values();
  ref.running_mean = params.at(prefix + ".running_mean").values();
  ref.running_var = params.at(prefix + ".running_var").values();
  if (stats_out) {
    ref.running_mean_update = stats_out->at(prefix + ".running_mean").values();
    ref.running_var_update = stats_out->at(prefix + ".running_var").values();
  }
  return ref;
}

template <typename T>
Tensor<T> vector_tensor(std::vector<T>&& values) {
  const std::size_t n = values.size();
  return Tensor<T>({n}, std::move(values));
}

template <typename T>
Tensor<T> add_tensors(Tensor<T> a, const Tensor<T>& b, const char* what) {
  require_same_shape(a, b, what);
  a += b;
  return a;
}

}  // namespace detail

/// conv3x3 -> BN -> ReLU -> conv3x3 -> BN, plus identity or 1x1 conv + BN
/// projection shortcut, then ReLU.
template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x, const ModelParams<T>& params,
                                 ModelParams<T>* stats_out, const std::string& prefix,
                                 const ResidualBlockSpec& spec, Mode mode,
                                 BlockCache<T>* cache = nullptr) {
  const std::span<const T> no_bias;
  const auto conv1 = ops::ConvSpec::square(spec.in_channels, spec.out_channels, 3, spec.stride, 1);
  const auto conv2 = ops::ConvSpec::square(spec.out_channels, spec.out_channels, 3, 1, 1);

  Tensor<T> h = ops::conv2d_forward(x, params.at(prefix + ".conv1.weight"), no_bias, conv1);
  Tensor<T> b1 = ops::batchnorm_forward(h, detail::bn_ref(params, stats_out, prefix + ".bn1"), mode,
                                        cache ? &cache->bn1 : nullptr);
  Tensor<T> r1 = ops::relu(b1);
  h = ops::conv2d_forward(r1, params.at(prefix + ".conv2.weight"), no_bias, conv2);
  Tensor<T> b2 = ops::batchnorm_forward(h, detail::bn_ref(params, stats_out, prefix + ".bn2"), mode,
                                        cache ? &cache->bn2 : nullptr);
  Tensor<T> shortcut;
  if (spec.has_projection()) {
    const auto down = ops::ConvSpec::square(spec.in_channels, spec.out_channels, 1, spec.stride, 0);
    Tensor<T> d = ops::conv2d_forward(x, params.at(prefix + ".downsample.0.weight"), no_bias, down);
    shortcut = ops::batchnorm_forward(d, detail::bn_ref(params, stats_out, prefix + ".downsample.1"),
                                      mode, cache ? &cache->down_bn : nullptr);
  } else {
    shortcut = x;
  }
  Tensor<T> pre = detail::add_tensors(std::move(b2), shortcut, "residual block: branch vs shortcut");
  Tensor<T> out = ops::relu(pre);
  if (cache) {
    cache->input = x;
    cache->bn1_out = std::move(b1);
    cache->relu1_out = std::move(r1);
    cache->pre_activation = std::move(pre);
  }
  return out;
}

/// Returns the gradient with respect to the block input and writes parameter
/// gradients into `grads` under the block's names.
template <typename T>
Tensor<T> residual_block_backward(const Tensor<T>& grad_out, const BlockCache<T>& cache,
                                  const ModelParams<T>& params, const std::string& prefix,
                                  const ResidualBlockSpec& spec, Gradients<T>& grads) {
  const auto conv1 = ops::ConvSpec::square(spec.in_channels, spec.out_channels, 3, spec.stride, 1);
  const auto conv2 = ops::ConvSpec::square(spec.out_channels, spec.out_channels, 3, 1, 1);

  const Tensor<T> g_pre = ops::relu_backward(grad_out, cache.pre_activation);
  auto bn2 = ops::batchnorm_backward(g_pre, cache.bn2);
  grads.add(prefix + ".bn2.weight", detail::vector_tensor(std::move(bn2.gamma)));
  grads.add(prefix + ".bn2.bias", detail::vector_tensor(std::move(bn2.beta)));
  auto c2 = ops::conv2d_backward(bn2.input, cache.relu1_out, params.at(prefix + ".conv2.weight"), conv2);
  grads.add(prefix + ".conv2.weight", std::move(c2.weights));
  const Tensor<T> g_b1 = ops::relu_backward(c2.input, cache.bn1_out);
  auto bn1 = ops::batchnorm_backward(g_b1, cache.bn1);
  grads.add(prefix + ".bn1.weight", detail::vector_tensor(std::move(bn1.gamma)));
  grads.add(prefix + ".bn1.bias", detail::vector_tensor(std::move(bn1.beta)));
  auto c1 = ops::conv2d_backward(bn1.input, cache.input, params.at(prefix + ".conv1.weight"), conv1);
  grads.add(prefix + ".conv1.weight", std::move(c1.weights));

  Tensor<T> g_input = std::move(c1.input);
  if (spec.has_projection()) {
    const auto down = ops::ConvSpec::square(spec.in_channels, spec.out_channels, 1, spec.stride, 0);
    auto dbn = ops::batchnorm_backward(g_pre, cache.down_bn);
    auto dc = ops::conv2d_backward(dbn.input, cache.input,
                                   params.at(prefix + ".downsample.0.weight"), down);
    grads.add(prefix + ".downsample.0.weight", std::move(dc.weights));
    grads.add(prefix + ".downsample.1.weight", detail::vector_tensor(std::move(dbn.gamma)));
    grads.add(prefix + ".downsample.1.bias", detail::vector_tensor(std::move(dbn.beta)));
    g_input += dc.input;
  } else {
    g_input += g_pre;
  }
  return g_input;
}

/// ResNet-18 style classifier: 7x7/2 stem conv, BN, ReLU, optional 3x3/2 max
/// pool, residual stages (channels doubling and spatial extent halving at each
/// stage boundary), global average pooling, linear head.
template <typename T>
class ResNet {
 public:
  ResNet(ArchitectureConfig config, std::uint64_t seed)
      : config_(std::move(config)), params_(build<T>(config_, seed)) {}

  ResNet(ArchitectureConfig config, ModelParams<T> params)
      : config_(std::move(config)), params_(std::move(params)) {
    validate_params(config_, params_);
  }

  const ArchitectureConfig& config() const noexcept { return config_; }
  const ModelParams<T>& params() const noexcept { return params_; }
  ModelParams<T>& params() noexcept { return params_; }

  /// Training mode updates batch-norm running statistics.
  Tensor<T> forward(const Tensor<T>& batch, Mode mode, ForwardCache<T>* cache = nullptr) {
    return run_forward(batch, mode == Mode::Training ? &params_ : nullptr, mode, cache);
  }

  /// Inference-mode forward; a pure function of (params, batch).
  Tensor<T> infer(const Tensor<T>& batch) const {
    return run_forward(batch, nullptr, Mode::Inference, nullptr);
  }

  /// Gradients of <grad_logits, logits> for every trainable parameter, in
  /// canonical order.
  Gradients<T> backward(const ForwardCache<T>& cache, const Tensor<T>& grad_logits) const {
    if (cache.blocks.empty()) throw ShapeError("backward: forward cache is empty");
    Gradients<T> unordered;
    auto head = ops::linear_backward(grad_logits, cache.features, params_.at("fc.weight"));
    unordered.add("fc.weight", std::move(head.weights));
    unordered.add("fc.bias", detail::vector_tensor(std::move(head.bias)));
    const std::size_t n = cache.features.dim(0), f = cache.features.dim(1);
    Tensor<T> g = ops::global_avg_pool_backward(head.input.reshaped({n, f, 1, 1}),
                                                cache.gap_input_shape);
    const auto stages = block_specs(config_);
    std::size_t flat = cache.blocks.size();
    for (std::size_t s = stages.size(); s-- > 0;) {
      for (std::size_t b = stages[s].size(); b-- > 0;) {
        g = residual_block_backward(g, cache.blocks[--flat], params_, detail::block_prefix(s, b),
                                    stages[s][b], unordered);
      }
    }
    if (config_.include_stem_maxpool) {
      g = ops::maxpool2d_backward(g, cache.pool_argmax, cache.pool_input_shape);
    }
    g = ops::relu_backward(g, cache.stem_bn_out);
    auto bn = ops::batchnorm_backward(g, cache.stem_bn);
    unordered.add("bn1.weight", detail::vector_tensor(std::move(bn.gamma)));
    unordered.add("bn1.bias", detail::vector_tensor(std::move(bn.beta)));
    auto stem = ops::conv2d_backward(bn.input, cache.input, params_.at("conv1.weight"), stem_spec());
    unordered.add("conv1.weight", std::move(stem.weights));

    Gradients<T> grads;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string& name = params_.name(i);
      if (!is_buffer(name)) grads.add(name, std::move(unordered.at(name)));
    }
    return grads;
  }

 private:
  ops::ConvSpec stem_spec() const {
    return ops::ConvSpec::square(config_.input_channels, config_.base_channels, 7, 2, 3);
  }

  Tensor<T> run_forward(const Tensor<T>& batch, ModelParams<T>* stats_out, Mode mode,
                        ForwardCache<T>* cache) const {
    if (batch.rank() != 4 || batch.dim(1) != config_.input_channels ||
        batch.dim(2) != config_.input_size || batch.dim(3) != config_.input_size) {
      throw ShapeError("forward: expected input Nx" + std::to_string(config_.input_channels) + "x" +
                       std::to_string(config_.input_size) + "x" +
                       std::to_string(config_.input_size) + ", got " + batch.shape_string());
    }
    const std::span<const T> no_bias;
    Tensor<T> h = ops::conv2d_forward(batch, params_.at("conv1.weight"), no_bias, stem_spec());
    Tensor<T> bn = ops::batchnorm_forward(h, detail::bn_ref(params_, stats_out, "bn1"), mode,
                                          cache ? &cache->stem_bn : nullptr);
    h = ops::relu(bn);
    if (cache) {
      cache->mode = mode;
      cache->input = batch;
      cache->stem_bn_out = std::move(bn);
      cache->blocks.clear();
    }
    if (config_.include_stem_maxpool) {
      auto pooled = ops::maxpool2d(h, ops::PoolSpec{3, 2, 1});
      if (cache) {
        cache->pool_input_shape = h.shape();
        cache->pool_argmax = std::move(pooled.argmax);
      }
      h = std::move(pooled.output);
    }
    const auto stages = block_specs(config_);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        BlockCache<T>* bc = nullptr;
        if (cache) bc = &cache->blocks.emplace_back();
        h = residual_block_forward(h, params_, stats_out, detail::block_prefix(s, b), stages[s][b],
                                   mode, bc);
      }
    }
    const std::size_t n = h.dim(0), f = h.dim(1);
    if (cache) cache->gap_input_shape = h.shape();
    Tensor<T> features = ops::global_avg_pool(h).reshaped({n, f});
    const Tensor<T>& bias = params_.at("fc.bias");
    Tensor<T> logits = ops::linear_forward(features, params_.at("fc.weight"), bias.values());
    if (cache) cache->features = std::move(features);
    return logits;
  }

  ArchitectureConfig config_;
  ModelParams<T> params_;
};

}  // namespace glpath

#endif  // GLPATH_MODEL_HPP
