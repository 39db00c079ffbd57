// glpath: train, cross-validate, predict with and evaluate glioblastoma
// patch classifiers.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "glpath/cli.hpp"

namespace {

struct Options {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> output_dir;
  std::vector<std::string> assignments;
  std::optional<std::string> manifest;
  std::optional<std::size_t> folds;
  std::vector<std::string> checkpoints;
  std::string predictions;
};

// Precedence, lowest first: defaults, --config file, --set, dedicated flags.
glpath::RunConfig effective_config(const Options& o) {
  glpath::RunConfig config;
  if (!o.config_file.empty()) {
    std::string text;
    try {
      text = glpath::read_text_file(o.config_file);
    } catch (const glpath::DataError& e) {
      throw glpath::ConfigError(e.what());
    }
    glpath::apply_config_text(config, text);
  }
  for (const auto& kv : o.assignments) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw glpath::ConfigError("--set expects key=value, got '" + kv + "'");
    glpath::set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) config.train.seed = *o.seed;
  if (o.deterministic) config.deterministic = true;
  if (o.output_dir) config.output_dir = *o.output_dir;
  if (o.manifest) config.manifest = *o.manifest;
  if (o.folds) config.folds = *o.folds;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Glioblastoma histology patch classification with ResNet-18"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_file, "key=value configuration file");
  app.add_option("--seed", o.seed, "Random seed (overrides the config file)");
  app.add_flag("--deterministic", o.deterministic, "Run every step sequentially in a fixed order");
  app.add_option("--output-dir", o.output_dir, "Directory for all outputs");
  app.add_option("--set", o.assignments, "Override one configuration key (key=value), repeatable");

  auto* train = app.add_subcommand("train", "Train one model on a stratified train/validation split");
  train->add_option("--manifest", o.manifest, "Labeled manifest (path,label)");

  auto* cv = app.add_subcommand("cross-validate", "Train one model per fold of stratified k-fold CV");
  cv->add_option("--manifest", o.manifest, "Labeled manifest (path,label)");
  cv->add_option("--folds", o.folds, "Number of folds");

  auto* predict = app.add_subcommand("predict", "Predict classes with one model or an ensemble of up to five");
  predict->add_option("--manifest", o.manifest, "Image list (path or path,label)");
  predict->add_option("--checkpoint", o.checkpoints, "Checkpoint file, repeat for an ensemble")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score a predictions file against a labeled manifest");
  evaluate->add_option("--predictions", o.predictions, "predictions.csv from the predict command")->required();
  evaluate->add_option("--manifest", o.manifest, "Labeled manifest (path,label)");

  auto* stats = app.add_subcommand("stats", "Per-channel normalization statistics of a manifest");
  stats->add_option("--manifest", o.manifest, "Manifest whose images are measured");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return glpath::cli::kUsage;
  }

  glpath::RunConfig config;
  try {
    config = effective_config(o);
  } catch (const glpath::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return glpath::cli::kUsage;
  }

  if (*train) return glpath::cli::cmd_train(config, std::cout, std::cerr);
  if (*cv) return glpath::cli::cmd_cross_validate(config, std::cout, std::cerr);
  if (*predict) return glpath::cli::cmd_predict(config, o.checkpoints, std::cout, std::cerr);
  if (*evaluate) return glpath::cli::cmd_evaluate(config, o.predictions, std::cout, std::cerr);
  if (*stats) return glpath::cli::cmd_stats(config, std::cout, std::cerr);
  return glpath::cli::kUsage;
}
