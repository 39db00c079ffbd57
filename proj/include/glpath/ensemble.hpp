// Single-model and ensemble inference over PPM images, plus the predictions
// CSV.
#ifndef GLPATH_ENSEMBLE_HPP
#define GLPATH_ENSEMBLE_HPP

#include <algorithm>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glpath/checkpoint.hpp"
#include "glpath/data.hpp"
#include "glpath/model.hpp"
#include "glpath/ops/activation.hpp"

namespace glpath {

/// A loaded checkpoint ready for inference. Immutable after construction, so
/// concurrent predict() calls are safe.
class Predictor {
 public:
  explicit Predictor(Checkpoint checkpoint)
      : checkpoint_(std::move(checkpoint)), model_(checkpoint_.architecture, checkpoint_.params) {}

  const Checkpoint& checkpoint() const noexcept { return checkpoint_; }
  const ResNet<float>& model() const noexcept { return model_; }

  /// Decoded, standardized image using this checkpoint's own statistics.
  Tensor<float> preprocess(std::span<const std::uint8_t> ppm) const {
    const auto img = decode_ppm(ppm);
    const std::size_t s = checkpoint_.architecture.input_size;
    if (img.dim(1) != s || img.dim(2) != s) {
      throw DataError("image is " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(1)) +
                      ", model expects " + std::to_string(s) + "x" + std::to_string(s));
    }
    return normalize(to_rgb_unit<float>(img, checkpoint_.assume_bgr), checkpoint_.norm);
  }

  /// Softmax probabilities for a batch of preprocessed images (B x K).
  Tensor<double> probabilities(std::span<const Tensor<float>> images) const {
    if (images.empty()) throw DataError("no images to predict");
    const auto& first = images.front().shape();
    Tensor<float> batch({images.size(), first[0], first[1], first[2]});
    const std::size_t stride = images.front().size();
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::copy_n(images[i].data(), stride, batch.data() + i * stride);
    }
    return ops::softmax(model_.infer(batch).cast<double>());
  }

  std::vector<double> predict(std::span<const std::uint8_t> ppm) const {
    const Tensor<float> x = preprocess(ppm);
    const auto p = probabilities(std::span<const Tensor<float>>(&x, 1));
    return {p.data(), p.data() + p.size()};
  }

 private:
  Checkpoint checkpoint_;
  ResNet<float> model_;
};

inline std::vector<double> predict_single(const Predictor& predictor, std::span<const std::uint8_t> ppm) {
  return predictor.predict(ppm);
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DataError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Componentwise mean of equally long vectors. Each component is averaged in
/// sorted order as v0 + sum (v_i - v0) / M, so the result does not depend on
/// the order of the inputs and M copies of one vector average to it exactly.
inline std::vector<double> mean_vector(std::span<const std::vector<double>> vectors) {
  if (vectors.empty()) throw DataError("mean of zero vectors");
  const std::size_t k = vectors.front().size();
  const double m = static_cast<double>(vectors.size());
  std::vector<double> out(k), column(vectors.size());
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      if (vectors[i].size() != k) throw ShapeError("mean_vector: vectors differ in length");
      column[i] = vectors[i][j];
    }
    std::sort(column.begin(), column.end());
    double offset = 0;
    for (std::size_t i = 1; i < column.size(); ++i) offset += (column[i] - column[0]) / m;
    out[j] = column[0] + offset;
  }
  return out;
}

struct EnsemblePrediction {
  std::vector<double> probabilities;
  std::size_t label = 0;
  /// One vector per model, filled only in verbose mode.
  std::vector<std::vector<double>> per_model;
};

inline void require_compatible(std::span<const Predictor> predictors) {
  if (predictors.empty()) throw ConfigError("ensemble needs at least one checkpoint");
  const auto& ref = predictors.front().checkpoint();
  for (std::size_t i = 1; i < predictors.size(); ++i) {
    const auto& c = predictors[i].checkpoint();
    if (!(c.architecture == ref.architecture)) {
      throw ConfigError("checkpoint " + std::to_string(i + 1) + " has a different architecture");
    }
    if (c.classes != ref.classes) {
      throw ConfigError("checkpoint " + std::to_string(i + 1) + " has a different class vocabulary");
    }
  }
}

/// Averages softmax probabilities of every predictor for `count` images
/// supplied by `load(i)`; each predictor applies its own normalization.
inline std::vector<EnsemblePrediction> predict_ensemble(
    std::span<const Predictor> predictors, std::size_t count,
    const std::function<std::vector<std::uint8_t>(std::size_t)>& load, bool verbose = false,
    std::size_t chunk = 16) {
  require_compatible(predictors);
  std::vector<EnsemblePrediction> out(count);
  std::vector<std::vector<std::uint8_t>> raw;
  std::vector<Tensor<float>> images;
  std::vector<std::vector<double>> per_model(predictors.size());
  for (std::size_t start = 0; start < count; start += chunk) {
    const std::size_t end = std::min(count, start + chunk);
    raw.clear();
    for (std::size_t i = start; i < end; ++i) raw.push_back(load(i));
    std::vector<Tensor<double>> probs;
    for (const auto& p : predictors) {
      images.clear();
      for (const auto& bytes : raw) images.push_back(p.preprocess(bytes));
      probs.push_back(p.probabilities(images));
    }
    const std::size_t k = probs.front().dim(1);
    for (std::size_t i = start; i < end; ++i) {
      for (std::size_t m = 0; m < predictors.size(); ++m) {
        const double* row = probs[m].data() + (i - start) * k;
        per_model[m].assign(row, row + k);
      }
      auto& pred = out[i];
      pred.probabilities = mean_vector(per_model);
      pred.label = argmax(pred.probabilities);
      if (verbose) pred.per_model = per_model;
    }
  }
  return out;
}

inline std::vector<EnsemblePrediction> predict_ensemble(std::span<const Predictor> predictors,
                                                        const std::vector<std::filesystem::path>& images,
                                                        bool verbose = false) {
  return predict_ensemble(
      predictors, images.size(), [&](std::size_t i) { return read_binary_file(images[i]); }, verbose);
}

// ---------------------------------------------------------------------------
// Predictions CSV: path,pred_label,prob_<class>... with 6 decimals.

inline std::string format_predictions(std::span<const EnsemblePrediction> predictions,
                                      std::span<const std::string> paths,
                                      std::span<const std::string> classes) {
  if (predictions.size() != paths.size()) throw DataError("prediction and path counts differ");
  std::string out = "path,pred_label";
  for (const auto& c : classes) out += ",prob_" + c;
  out += "\n";
  char buf[32];
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (p.probabilities.size() != classes.size()) throw ShapeError("prediction has the wrong class count");
    out += paths[i] + "," + classes[p.label];
    for (double v : p.probabilities) {
      std::snprintf(buf, sizeof buf, ",%.6f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

inline void write_predictions(const std::filesystem::path& path, std::span<const EnsemblePrediction> predictions,
                              std::span<const std::string> paths, std::span<const std::string> classes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << format_predictions(predictions, paths, classes);
  if (!out) throw DataError("cannot write predictions to " + path.string());
}

struct PredictionRow {
  std::string path;
  std::size_t label = 0;
  std::vector<double> probabilities;
};

inline std::vector<PredictionRow> parse_predictions(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw ParseError(1, "predictions file is empty");
  const auto header = detail::split_fields(lines[0]);
  if (header.size() < 4 || detail::trim(header[0]) != "path" || detail::trim(header[1]) != "pred_label") {
    throw ParseError(1, "predictions header must start with 'path,pred_label,prob_...'");
  }
  std::vector<std::string> classes;
  for (std::size_t j = 2; j < header.size(); ++j) {
    const auto h = detail::trim(header[j]);
    if (h.substr(0, 5) != "prob_") throw ParseError(1, "expected a prob_<class> column");
    classes.emplace_back(h.substr(5));
  }
  std::vector<PredictionRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = detail::split_fields(lines[i]);
    if (f.size() != header.size()) throw ParseError(i + 1, "expected " + std::to_string(header.size()) + " fields");
    PredictionRow row;
    row.path = std::string(detail::trim(f[0]));
    const auto label = std::find(classes.begin(), classes.end(), detail::trim(f[1]));
    if (label == classes.end()) throw ParseError(i + 1, "unknown label '" + std::string(f[1]) + "'");
    row.label = static_cast<std::size_t>(label - classes.begin());
    for (std::size_t j = 2; j < f.size(); ++j) {
      const auto v = parse_double(f[j]);
      if (!v) throw ParseError(i + 1, "bad probability '" + std::string(f[j]) + "'");
      row.probabilities.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace glpath

#endif  // GLPATH_ENSEMBLE_HPP
