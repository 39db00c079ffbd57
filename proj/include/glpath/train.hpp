// Weighted cross-entropy, Adam, the epoch loop and early stopping.
#ifndef GLPATH_TRAIN_HPP
#define GLPATH_TRAIN_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glpath/data.hpp"
#include "glpath/error.hpp"
#include "glpath/model.hpp"
#include "glpath/ops/activation.hpp"
#include "glpath/rng.hpp"
#include "glpath/tensor.hpp"

namespace glpath {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 300;
  std::size_t patience = 20;
  double min_delta = 1e-6;
  std::uint64_t seed = 0;
  bool use_class_weights = true;

  void validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be positive");
    }
    if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("beta1 must lie in (0, 1)");
    if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("beta2 must lie in (0, 1)");
    if (!(adam_epsilon > 0)) throw ConfigError("adam_epsilon must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (!(min_delta >= 0)) throw ConfigError("min_delta must be non-negative");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---------------------------------------------------------------------------
// Loss

template <typename T>
struct LossResult {
  double loss = 0;
  Tensor<T> grad_logits;
};

/// Weighted mean of per-sample cross-entropy:
///   sum_i w[y_i] * -log softmax(z_i)[y_i] / sum_i w[y_i]
template <typename T>
LossResult<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels,
                                     std::span<const double> weights) {
  if (logits.rank() != 2) throw ShapeError("cross entropy: logits must be NxK, got " + logits.shape_string());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  if (weights.size() != k) {
    throw ShapeError("cross entropy: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(k) + " classes");
  }
  for (double w : weights) {
    if (!(w > 0) || !std::isfinite(w)) throw ConfigError("cross entropy: weights must be positive");
  }
  double total_weight = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw DataError("cross entropy: label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " is outside 0.." + std::to_string(k - 1));
    }
    total_weight += weights[labels[i]];
  }

  LossResult<T> out{0.0, Tensor<T>({n, k})};
  double loss = 0;
  std::vector<double> p(k);
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * k;
    double peak = z[0];
    for (std::size_t j = 1; j < k; ++j) peak = std::max(peak, static_cast<double>(z[j]));
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - peak);
    const double log_sum = std::log(sum);
    for (std::size_t j = 0; j < k; ++j) p[j] = std::exp(static_cast<double>(z[j]) - peak - log_sum);
    const std::size_t y = labels[i];
    const double scale = weights[y] / total_weight;
    loss += weights[y] * (log_sum - (static_cast<double>(z[y]) - peak));
    T* g = out.grad_logits.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      g[j] = static_cast<T>(scale * (p[j] - (j == y ? 1.0 : 0.0)));
    }
  }
  out.loss = loss / total_weight;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
  TensorMap<T> m;
  TensorMap<T> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update. The state's moment tensors are created on
/// the first call and must mirror the gradient map afterwards.
template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& config) {
  if (state.m.size() == 0) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      state.m.add(grads.name(i), Tensor<T>::zeros(grads.tensor(i).shape()));
      state.v.add(grads.name(i), Tensor<T>::zeros(grads.tensor(i).shape()));
    }
  }
  if (state.m.size() != grads.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const std::string& name = grads.name(i);
    if (state.m.name(i) != name || !params.contains(name)) {
      throw ShapeError("adam: gradient '" + name + "' does not match optimizer state");
    }
    const Tensor<T>& g = grads.tensor(i);
    if (state.m.tensor(i).shape() != g.shape() || params.at(name).shape() != g.shape()) {
      throw ShapeError("adam: shape mismatch for '" + name + "': gradient " + g.shape_string() +
                       ", parameter " + params.at(name).shape_string() + ", state " +
                       state.m.tensor(i).shape_string());
    }
  }

  state.t += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto g = grads.tensor(i).values();
    auto m = state.m.tensor(i).values();
    auto v = state.v.tensor(i).values();
    auto p = params.at(grads.name(i)).values();
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double step = config.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + config.adam_epsilon);
      p[j] = static_cast<T>(p[j] - step);
    }
  }
}

// ---------------------------------------------------------------------------
// Datasets and batching

/// Preprocessed images (N x C x H x W) with class indices.
template <typename T>
struct Dataset {
  Tensor<T> images;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.images = gather(indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    return out;
  }

  Tensor<T> gather(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw DataError("dataset: cannot gather an empty batch");
    const std::size_t stride = images.size() / images.dim(0);
    auto shape = images.shape();
    shape[0] = indices.size();
    Tensor<T> batch(shape);
    for (std::size_t b = 0; b < indices.size(); ++b) {
      if (indices[b] >= size()) throw DataError("dataset: index out of range");
      std::copy_n(images.data() + indices[b] * stride, stride, batch.data() + b * stride);
    }
    return batch;
  }
};

/// Stacks per-image C x H x W tensors into a dataset.
template <typename T>
Dataset<T> stack_dataset(std::span<const Tensor<T>> images, std::vector<std::size_t> labels) {
  if (images.empty()) throw DataError("dataset: no images");
  if (images.size() != labels.size()) throw DataError("dataset: image and label counts differ");
  const auto& first = images.front().shape();
  if (first.size() != 3) throw ShapeError("dataset: images must be CxHxW");
  Tensor<T> all({images.size(), first[0], first[1], first[2]});
  const std::size_t stride = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != first) {
      throw ShapeError("dataset: image " + std::to_string(i) + " is " + images[i].shape_string() +
                       ", expected " + images.front().shape_string());
    }
    std::copy_n(images[i].data(), stride, all.data() + i * stride);
  }
  return Dataset<T>{std::move(all), std::move(labels)};
}

/// Seeded shuffle of 0..n-1 cut into batches of batch_size; the order is
/// reseeded per epoch. A trailing batch of one sample is merged into the
/// previous batch because batch-norm statistics need two samples.
inline std::vector<std::vector<std::size_t>> plan_batches(std::size_t n, std::size_t batch_size,
                                                          std::uint64_t seed, std::size_t epoch) {
  if (n == 0) throw DataError("training set is empty");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

/// Loss weights for the training labels: inverse-frequency class weights, or
/// all ones when class weighting is off.
inline std::vector<double> loss_weights(std::span<const std::size_t> labels, std::size_t num_classes,
                                        bool use_class_weights) {
  if (!use_class_weights) return std::vector<double>(num_classes, 1.0);
  if (num_classes != kNumClasses) {
    throw ConfigError("class weighting requires the " + std::to_string(kNumClasses) +
                      "-class vocabulary");
  }
  ClassCounts counts{};
  for (std::size_t y : labels) {
    if (y >= kNumClasses) throw DataError("label index " + std::to_string(y) + " out of range");
    ++counts[y];
  }
  const auto w = class_weights(counts);
  return {w.begin(), w.end()};
}

inline void require_finite_loss(double loss, const char* what, std::size_t epoch) {
  if (!std::isfinite(loss)) {
    throw TrainingError(std::string(what) + " became non-finite at epoch " + std::to_string(epoch));
  }
}

/// One pass over the training set, one Adam step per batch. Returns the mean
/// of the per-batch losses weighted by batch size.
template <typename T>
double train_epoch(ResNet<T>& model, const Dataset<T>& data, AdamState<T>& state,
                   const TrainConfig& config, std::span<const double> weights, std::size_t epoch) {
  if (data.size() == 0) throw DataError("training set is empty");
  if (data.size() < 2) throw DataError("training needs at least 2 samples for batch statistics");
  double weighted = 0;
  for (const auto& batch : plan_batches(data.size(), config.batch_size, config.seed, epoch)) {
    const Tensor<T> x = data.gather(batch);
    std::vector<std::size_t> y;
    y.reserve(batch.size());
    for (std::size_t i : batch) y.push_back(data.labels[i]);
    ForwardCache<T> cache;
    const Tensor<T> logits = model.forward(x, Mode::Training, &cache);
    auto loss = weighted_cross_entropy(logits, y, weights);
    require_finite_loss(loss.loss, "training loss", epoch);
    const Gradients<T> grads = model.backward(cache, loss.grad_logits);
    adam_step(model.params(), grads, state, config);
    weighted += loss.loss * static_cast<double>(batch.size());
  }
  return weighted / static_cast<double>(data.size());
}

/// Inference-mode logits for a whole dataset, computed in chunks.
template <typename T>
Tensor<T> predict_logits(const ResNet<T>& model, const Dataset<T>& data, std::size_t chunk = 64) {
  if (data.size() == 0) throw DataError("dataset is empty");
  const std::size_t k = model.config().num_classes;
  Tensor<T> out({data.size(), k});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
    const Tensor<T> logits = model.infer(data.gather(idx));
    std::copy_n(logits.data(), logits.size(), out.data() + start * k);
  }
  return out;
}

/// Weighted cross-entropy over a whole dataset in inference mode.
template <typename T>
double evaluate_loss(const ResNet<T>& model, const Dataset<T>& data, std::span<const double> weights,
                     std::size_t chunk = 64) {
  if (data.size() == 0) throw DataError("validation set is empty");
  return weighted_cross_entropy(predict_logits(model, data, chunk), data.labels, weights).loss;
}

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks the best validation loss. An epoch improves when its loss is below
/// best - min_delta; the caller stops once epochs_since_improvement reaches
/// patience.
template <typename Snapshot>
struct EarlyStopState {
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::optional<Snapshot> snapshot;
  std::size_t epochs_since_improvement = 0;

  /// Returns true when the epoch is a new best; take(snapshot) is then called.
  template <typename Take>
  bool observe(double loss, std::size_t epoch, double min_delta, Take&& take) {
    if (loss < best_loss - min_delta) {
      best_loss = loss;
      best_epoch = epoch;
      snapshot = take();
      epochs_since_improvement = 0;
      return true;
    }
    ++epochs_since_improvement;
    return false;
  }

  bool should_stop(std::size_t patience) const { return epochs_since_improvement >= patience; }
};

template <typename Snapshot>
struct StopResult {
  Snapshot snapshot;
  std::size_t best_epoch = 0;
  double best_loss = 0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
};

/// Runs epochs 1..max_epochs; step(epoch) trains one epoch and returns its
/// validation loss, snapshot() captures the current state.
template <typename Step, typename Take>
auto run_early_stopping(std::size_t max_epochs, std::size_t patience, double min_delta, Step&& step,
                        Take&& snapshot) {
  using Snapshot = std::decay_t<decltype(snapshot())>;
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  EarlyStopState<Snapshot> state;
  StopResult<Snapshot> result;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const double loss = step(epoch);
    require_finite_loss(loss, "validation loss", epoch);
    state.observe(loss, epoch, min_delta, snapshot);
    result.epochs_run = epoch;
    if (state.should_stop(patience)) break;
  }
  result.stopped_early = state.should_stop(patience);
  result.snapshot = std::move(*state.snapshot);
  result.best_epoch = state.best_epoch;
  result.best_loss = state.best_loss;
  return result;
}

// ---------------------------------------------------------------------------
// fit

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

template <typename T>
struct FitResult {
  ModelParams<T> best_params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains until max_epochs or until validation loss stops improving for
/// `patience` epochs, then loads the best-epoch parameters into the model.
template <typename T>
FitResult<T> fit(ResNet<T>& model, const Dataset<T>& train, const Dataset<T>& val,
                 const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  if (val.size() == 0) throw DataError("validation set is empty");
  const std::size_t k = model.config().num_classes;
  const std::vector<double> weights = loss_weights(train.labels, k, config.use_class_weights);
  AdamState<T> state;
  FitResult<T> result;
  auto step = [&](std::size_t epoch) {
    const double train_loss = train_epoch(model, train, state, config, weights, epoch);
    const double val_loss = evaluate_loss(model, val, weights);
    result.history.push_back({epoch, train_loss, val_loss});
    if (on_epoch) on_epoch(result.history.back());
    return val_loss;
  };
  auto snapshot = [&] { return model.params(); };
  auto stop = run_early_stopping(config.max_epochs, config.patience, config.min_delta, step, snapshot);
  result.best_params = std::move(stop.snapshot);
  result.best_epoch = stop.best_epoch;
  result.best_val_loss = stop.best_loss;
  result.stopped_early = stop.stopped_early;
  model.params() = result.best_params;
  return result;
}

inline std::string format_history(std::span<const EpochRecord> history) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," +
           format_double(r.val_loss) + "\n";
  }
  return out;
}

inline std::vector<EpochRecord> parse_history(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || detail::trim(lines[0]) != "epoch,train_loss,val_loss") {
    throw ParseError(1, "history header must be 'epoch,train_loss,val_loss'");
  }
  std::vector<EpochRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = detail::split_fields(lines[i]);
    if (fields.size() != 3) throw ParseError(i + 1, "expected 3 fields");
    EpochRecord r;
    const auto epoch = parse_double(fields[0]);
    const auto train_loss = parse_double(fields[1]);
    const auto val_loss = parse_double(fields[2]);
    if (!epoch || !train_loss || !val_loss || *epoch < 1 || *epoch != std::floor(*epoch)) {
      throw ParseError(i + 1, "malformed history row");
    }
    r.epoch = static_cast<std::size_t>(*epoch);
    r.train_loss = *train_loss;
    r.val_loss = *val_loss;
    out.push_back(r);
  }
  return out;
}

}  // namespace glpath

#endif  // GLPATH_TRAIN_HPP
