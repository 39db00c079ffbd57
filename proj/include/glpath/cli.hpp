// Subcommand implementations behind the glpath tool. Every command returns
// an exit code: 0 success, 1 usage or configuration error, 2 data error,
// 3 training failure.
#ifndef GLPATH_CLI_HPP
#define GLPATH_CLI_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "glpath/checkpoint.hpp"
#include "glpath/data.hpp"
#include "glpath/ensemble.hpp"
#include "glpath/eval.hpp"
#include "glpath/run_config.hpp"
#include "glpath/train.hpp"

namespace glpath::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataFailure = 2, kTrainingFailure = 3 };

/// Maps the library's exceptions onto exit codes and reports them on `err`.
template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return kTrainingFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataFailure;
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

inline fs::path prepare_output(const RunConfig& config) {
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  write_text(dir / "effective_config.txt", format_run_config(config));
  return dir;
}

inline Manifest require_manifest(const RunConfig& config) {
  if (config.manifest.empty()) throw ConfigError("no manifest given (set manifest= or --manifest)");
  if (!fs::exists(config.manifest)) throw DataError("manifest not found: " + config.manifest);
  return load_manifest(config.manifest);
}

/// Decoded images as unit-range RGB tensors, checked against the model size.
inline std::vector<Tensor<float>> load_unit_images(const RunConfig& config, const Manifest& manifest) {
  std::vector<Tensor<float>> images;
  images.reserve(manifest.size());
  const std::size_t s = config.architecture.input_size;
  for (const auto& record : manifest.records()) {
    const fs::path path = resolve_image_path(config.manifest, record.image_path);
    Tensor<std::uint8_t> img;
    try {
      img = decode_ppm(read_binary_file(path));
    } catch (const ImageError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    if (img.dim(1) != s || img.dim(2) != s) {
      throw DataError(path.string() + ": image is " + std::to_string(img.dim(2)) + "x" +
                      std::to_string(img.dim(1)) + ", input_size is " + std::to_string(s));
    }
    images.push_back(to_rgb_unit<float>(img, config.assume_bgr));
  }
  return images;
}

inline std::vector<std::size_t> label_indices(const Manifest& manifest) {
  std::vector<std::size_t> labels;
  for (const auto& r : manifest.records()) labels.push_back(class_index(r.label));
  return labels;
}

/// Normalization stats from the `train` subset, and both subsets normalized
/// with them.
struct PreparedSplit {
  NormalizationStats stats;
  Dataset<float> train, val;
};

inline PreparedSplit prepare_split(const std::vector<Tensor<float>>& images, const std::vector<std::size_t>& labels,
                                   std::span<const std::size_t> train_idx, std::span<const std::size_t> val_idx) {
  auto pick = [&](std::span<const std::size_t> idx, std::vector<Tensor<float>>& out_images,
                  std::vector<std::size_t>& out_labels) {
    for (std::size_t i : idx) {
      out_images.push_back(images[i]);
      out_labels.push_back(labels[i]);
    }
  };
  std::vector<Tensor<float>> tr, va;
  std::vector<std::size_t> tl, vl;
  pick(train_idx, tr, tl);
  pick(val_idx, va, vl);
  PreparedSplit out;
  out.stats = compute_norm_stats<float>(tr);
  for (auto& t : tr) t = normalize(t, out.stats);
  for (auto& t : va) t = normalize(t, out.stats);
  out.train = stack_dataset<float>(tr, std::move(tl));
  out.val = stack_dataset<float>(va, std::move(vl));
  return out;
}

inline Checkpoint make_checkpoint(const RunConfig& config, const ResNet<float>& model,
                                  const NormalizationStats& stats, const FitResult<float>& fit_result,
                                  std::int64_t fold) {
  Checkpoint c;
  c.architecture = model.config();
  c.params = model.params();
  c.norm = stats;
  c.assume_bgr = config.assume_bgr;
  c.training.seed = config.train.seed;
  c.training.fold = fold;
  c.training.epochs_run = fit_result.history.size();
  c.training.best_val_loss = fit_result.best_val_loss;
  return c;
}

inline EpochCallback progress(std::ostream& out, const std::string& tag) {
  return [&out, tag](const EpochRecord& r) {
    out << tag << "epoch " << r.epoch << " train_loss " << format_double(r.train_loss) << " val_loss "
        << format_double(r.val_loss) << "\n";
  };
}

inline std::string format_split(const Manifest& m, std::span<const std::size_t> train,
                                std::span<const std::size_t> val) {
  std::vector<const char*> role(m.size(), "");
  for (std::size_t i : train) role[i] = "train";
  for (std::size_t i : val) role[i] = "val";
  std::string out = "index,path,label,subset\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += std::to_string(i) + "," + m[i].image_path + "," + std::string(class_name(m[i].label)) + "," + role[i] + "\n";
  }
  return out;
}

/// stats -> stratified split -> fit -> model.glpc, history.csv, split.csv,
/// norm_stats.txt.
inline int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const Manifest manifest = require_manifest(config);
    const auto images = load_unit_images(config, manifest);
    const auto labels = label_indices(manifest);
    const auto split = stratified_split(manifest, config.split_ratio, config.train.seed);
    const fs::path dir = prepare_output(config);
    auto prepared = prepare_split(images, labels, split.train, split.val);
    write_text(dir / "norm_stats.txt", format_norm_stats(prepared.stats));
    write_text(dir / "split.csv", format_split(manifest, split.train, split.val));
    out << "training on " << split.train.size() << " images, validating on " << split.val.size() << "\n";

    ResNet<float> model(config.architecture, config.train.seed);
    const auto result = fit(model, prepared.train, prepared.val, config.train, progress(out, ""));
    write_text(dir / "history.csv", format_history(result.history));
    save_checkpoint(dir / "model.glpc", make_checkpoint(config, model, prepared.stats, result, -1));
    out << "best epoch " << result.best_epoch << " val_loss " << format_double(result.best_val_loss) << "\n";
    out << "wrote " << (dir / "model.glpc").string() << "\n";
    return int(kOk);
  });
}

/// Joins predictions to a labeled manifest by path.
inline ConfusionMatrix confusion_for(const std::vector<PredictionRow>& rows, const Manifest& manifest) {
  std::map<std::string, std::size_t> truth;
  for (const auto& r : manifest.records()) truth[r.image_path] = class_index(r.label);
  ConfusionMatrix cm(kNumClasses);
  for (const auto& row : rows) {
    const auto it = truth.find(row.path);
    if (it == truth.end()) throw DataError("prediction for '" + row.path + "' has no entry in the manifest");
    cm.add(it->second, row.label);
  }
  return cm;
}

inline std::vector<std::string> vocabulary() { return {kClassNames.begin(), kClassNames.end()}; }

/// Per-(metric, scope) mean, min and max over fold reports.
inline std::string format_cv_summary(const std::vector<std::string>& fold_csvs) {
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (const auto& csv : fold_csvs) {
    const auto lines = detail::split_lines(csv);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = detail::split_fields(lines[i]);
      const std::string key = std::string(f[0]) + "," + std::string(f[1]);
      auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.first == key; });
      if (it == rows.end()) {
        rows.emplace_back(key, std::vector<double>{});
        it = rows.end() - 1;
      }
      it->second.push_back(*parse_double(f[2]));
    }
  }
  std::string out = "metric,scope,mean,min,max\n";
  for (const auto& [key, values] : rows) {
    double sum = 0;
    for (double v : values) sum += v;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    out += key + "," + format_double(sum / double(values.size())) + "," + format_double(*lo) + "," +
           format_double(*hi) + "\n";
  }
  return out;
}

/// k-fold training: fold{i}.glpc, fold{i}_history.csv, fold{i}_predictions.csv,
/// fold{i}_metrics.csv, folds.csv and cv_summary.csv.
inline int cmd_cross_validate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const Manifest manifest = require_manifest(config);
    const auto images = load_unit_images(config, manifest);
    const auto labels = label_indices(manifest);
    const auto assignment = kfold_indices(manifest, config.folds, config.fold_scheme, config.train.seed);
    const fs::path dir = prepare_output(config);

    std::vector<std::size_t> fold_of(manifest.size());
    for (std::size_t f = 0; f < assignment.folds.size(); ++f)
      for (std::size_t i : assignment.folds[f].val) fold_of[i] = f;
    std::string folds_csv = "index,path,label,fold\n";
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      folds_csv += std::to_string(i) + "," + manifest[i].image_path + "," +
                   std::string(class_name(manifest[i].label)) + "," + std::to_string(fold_of[i]) + "\n";
    }
    write_text(dir / "folds.csv", folds_csv);

    // Each fold writes only its own files and logs into its own buffer, so
    // folds can train concurrently; logs are replayed in fold order.
    auto run_fold = [&](std::size_t f) {
      const auto& fold = assignment.folds[f];
      const std::string tag = "fold" + std::to_string(f);
      std::ostringstream log;
      log << tag << ": training on " << fold.train.size() << " images, validating on " << fold.val.size() << "\n";
      auto prepared = prepare_split(images, labels, fold.train, fold.val);
      TrainConfig train = config.train;
      train.seed = derive_seed(config.train.seed, f + 1);
      ResNet<float> model(config.architecture, train.seed);
      const auto result = fit(model, prepared.train, prepared.val, train, progress(log, tag + " "));
      write_text(dir / (tag + "_history.csv"), format_history(result.history));
      Checkpoint ckpt = make_checkpoint(config, model, prepared.stats, result, static_cast<std::int64_t>(f));
      ckpt.training.seed = train.seed;
      save_checkpoint(dir / (tag + ".glpc"), ckpt);

      const std::vector<Predictor> predictor{Predictor(std::move(ckpt))};
      std::vector<fs::path> paths;
      std::vector<std::string> names;
      for (std::size_t i : fold.val) {
        paths.push_back(resolve_image_path(config.manifest, manifest[i].image_path));
        names.push_back(manifest[i].image_path);
      }
      const auto preds = predict_ensemble(predictor, paths);
      const std::string pred_csv = format_predictions(preds, names, vocabulary());
      write_text(dir / (tag + "_predictions.csv"), pred_csv);
      const auto report = aggregate(confusion_for(parse_predictions(pred_csv), manifest));
      const std::string report_csv = format_report_csv(report);
      write_text(dir / (tag + "_metrics.csv"), report_csv);
      log << tag << ": best epoch " << result.best_epoch << ", accuracy "
          << format_double(report.multiclass_accuracy) << "\n";
      return std::pair{report_csv, log.str()};
    };

    std::vector<std::string> reports;
    if (config.deterministic) {
      for (std::size_t f = 0; f < assignment.folds.size(); ++f) {
        auto [report, log] = run_fold(f);
        out << log;
        reports.push_back(std::move(report));
      }
    } else {
      std::vector<std::future<std::pair<std::string, std::string>>> pending;
      for (std::size_t f = 0; f < assignment.folds.size(); ++f) {
        pending.push_back(std::async(std::launch::async, run_fold, f));
      }
      for (auto& p : pending) {
        auto [report, log] = p.get();
        out << log;
        reports.push_back(std::move(report));
      }
    }
    write_text(dir / "cv_summary.csv", format_cv_summary(reports));
    out << "wrote " << assignment.folds.size() << " fold checkpoints to " << dir.string() << "\n";
    return int(kOk);
  });
}

/// Ensemble (or single-model) predictions for every image listed in the
/// manifest, in manifest order, written to predictions.csv.
inline int cmd_predict(const RunConfig& config, const std::vector<std::string>& checkpoints, std::ostream& out,
                       std::ostream& err) {
  return guarded(err, [&] {
    if (checkpoints.empty() || checkpoints.size() > 5) {
      throw ConfigError("predict takes between 1 and 5 checkpoints, got " + std::to_string(checkpoints.size()));
    }
    if (config.manifest.empty()) throw ConfigError("no manifest given (set manifest= or --manifest)");
    std::vector<Predictor> predictors;
    for (const auto& path : checkpoints) predictors.emplace_back(load_checkpoint(path));
    try {
      require_compatible(predictors);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("checkpoint schema mismatch: ") + e.what());
    }
    if (!fs::exists(config.manifest)) throw DataError("manifest not found: " + config.manifest);
    const auto names = parse_image_list(read_text_file(config.manifest));
    std::vector<fs::path> paths;
    for (const auto& n : names) paths.push_back(resolve_image_path(config.manifest, n));
    const auto preds = predict_ensemble(predictors, paths);
    const fs::path dir = prepare_output(config);
    write_predictions(dir / "predictions.csv", preds, names, predictors.front().checkpoint().classes);
    out << "wrote " << preds.size() << " predictions from " << predictors.size() << " model"
        << (predictors.size() == 1 ? "" : "s") << " to " << (dir / "predictions.csv").string() << "\n";
    return int(kOk);
  });
}

/// Metrics of a predictions CSV against a labeled manifest; prints the report
/// and writes metrics.csv.
inline int cmd_evaluate(const RunConfig& config, const std::string& predictions, std::ostream& out,
                        std::ostream& err) {
  return guarded(err, [&] {
    if (predictions.empty()) throw ConfigError("no predictions file given");
    const Manifest manifest = require_manifest(config);
    if (!fs::exists(predictions)) throw DataError("predictions not found: " + predictions);
    std::vector<PredictionRow> rows;
    try {
      rows = parse_predictions(read_text_file(predictions));
    } catch (const ParseError& e) {
      throw DataError(predictions + ": " + e.what());
    }
    const auto report = aggregate(confusion_for(rows, manifest));
    const fs::path dir = prepare_output(config);
    write_text(dir / "metrics.csv", format_report_csv(report));
    out << format_report_text(report);
    return int(kOk);
  });
}

/// Normalization statistics over every image in the manifest.
inline int cmd_stats(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Manifest manifest = require_manifest(config);
    // Statistics do not depend on the model input size, so any size is accepted.
    std::vector<Tensor<float>> images;
    for (const auto& record : manifest.records()) {
      const fs::path path = resolve_image_path(config.manifest, record.image_path);
      try {
        images.push_back(to_rgb_unit<float>(decode_ppm(read_binary_file(path)), config.assume_bgr));
      } catch (const ImageError& e) {
        throw DataError(path.string() + ": " + e.what());
      }
    }
    const auto stats = compute_norm_stats<float>(images);
    const fs::path dir = prepare_output(config);
    const std::string text = format_norm_stats(stats);
    write_text(dir / "norm_stats.txt", text);
    out << text;
    return int(kOk);
  });
}

}  // namespace glpath::cli

#endif  // GLPATH_CLI_HPP
