// Flat key=value run configuration shared by every subcommand.
#ifndef GLPATH_RUN_CONFIG_HPP
#define GLPATH_RUN_CONFIG_HPP

#include <charconv>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "glpath/data.hpp"
#include "glpath/error.hpp"
#include "glpath/model.hpp"
#include "glpath/train.hpp"

namespace glpath {

struct RunConfig {
  TrainConfig train;
  ArchitectureConfig architecture;
  std::string manifest;
  std::string output_dir = ".";
  FoldScheme fold_scheme = FoldScheme::Seeded;
  std::size_t folds = 5;
  double split_ratio = 0.8;
  /// Image files store channels as BGR rather than RGB.
  bool assume_bgr = false;
  /// Serializes work that could otherwise run concurrently (cross-validation folds).
  bool deterministic = false;

  void validate() const {
    train.validate();
    architecture.validate();
    if (architecture.num_classes != kNumClasses) {
      throw ConfigError("num_classes must be " + std::to_string(kNumClasses));
    }
    if (architecture.input_channels != 3) throw ConfigError("input_channels must be 3");
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (!(split_ratio > 0 && split_ratio < 1)) throw ConfigError("split_ratio must lie in (0, 1)");
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline std::uint64_t config_uint(std::string_view key, std::string_view v) {
  v = trim(v);
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline double config_double(std::string_view key, std::string_view v) {
  const auto d = parse_double(v);
  if (!d) throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return *d;
}

inline bool config_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::string bool_text(bool b) { return b ? "true" : "false"; }

struct ConfigKey {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// `field` is a generic lambda returning a reference to the member.
template <typename Field, typename Parse, typename Show>
ConfigKey make_key(const char* name, Field field, Parse parse, Show show) {
  return {name, [=](RunConfig& c, std::string_view v) { field(c) = parse(name, v); },
          [=](const RunConfig& c) { return show(field(c)); }};
}

inline std::string show_double(double v) { return format_double(v); }
inline std::string show_uint(std::uint64_t v) { return std::to_string(v); }
inline std::string show_text(const std::string& v) { return v; }
inline std::string parse_text(std::string_view, std::string_view v) { return std::string(trim(v)); }

inline std::vector<std::size_t> parse_block_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> blocks;
  for (auto part : split_fields(v)) blocks.push_back(config_uint(key, part));
  return blocks;
}

inline std::string show_block_list(const std::vector<std::size_t>& blocks) {
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) out += (i ? "," : "") + std::to_string(blocks[i]);
  return out;
}

inline FoldScheme parse_scheme(std::string_view key, std::string_view v) {
  const auto s = parse_fold_scheme(trim(v));
  if (!s) throw ConfigError(std::string(key) + ": expected seeded or contiguous, got '" + std::string(v) + "'");
  return *s;
}

inline std::string show_scheme(FoldScheme s) { return std::string(fold_scheme_name(s)); }

#define GLPATH_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      make_key("learning_rate", GLPATH_FIELD(train.learning_rate), config_double, show_double),
      make_key("beta1", GLPATH_FIELD(train.beta1), config_double, show_double),
      make_key("beta2", GLPATH_FIELD(train.beta2), config_double, show_double),
      make_key("adam_epsilon", GLPATH_FIELD(train.adam_epsilon), config_double, show_double),
      make_key("batch_size", GLPATH_FIELD(train.batch_size), config_uint, show_uint),
      make_key("max_epochs", GLPATH_FIELD(train.max_epochs), config_uint, show_uint),
      make_key("patience", GLPATH_FIELD(train.patience), config_uint, show_uint),
      make_key("min_delta", GLPATH_FIELD(train.min_delta), config_double, show_double),
      make_key("seed", GLPATH_FIELD(train.seed), config_uint, show_uint),
      make_key("use_class_weights", GLPATH_FIELD(train.use_class_weights), config_bool, bool_text),
      make_key("input_size", GLPATH_FIELD(architecture.input_size), config_uint, show_uint),
      make_key("base_channels", GLPATH_FIELD(architecture.base_channels), config_uint, show_uint),
      make_key("blocks_per_stage", GLPATH_FIELD(architecture.blocks_per_stage), parse_block_list,
               show_block_list),
      make_key("include_stem_maxpool", GLPATH_FIELD(architecture.include_stem_maxpool), config_bool,
               bool_text),
      make_key("manifest", GLPATH_FIELD(manifest), parse_text, show_text),
      make_key("output_dir", GLPATH_FIELD(output_dir), parse_text, show_text),
      make_key("fold_scheme", GLPATH_FIELD(fold_scheme), parse_scheme, show_scheme),
      make_key("folds", GLPATH_FIELD(folds), config_uint, show_uint),
      make_key("split_ratio", GLPATH_FIELD(split_ratio), config_double, show_double),
      make_key("assume_bgr", GLPATH_FIELD(assume_bgr), config_bool, bool_text),
      make_key("deterministic", GLPATH_FIELD(deterministic), config_bool, bool_text),
  };
  return keys;
}

#undef GLPATH_FIELD

}  // namespace detail

/// Sets one key; unknown keys are rejected.
inline void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  key = detail::trim(key);
  for (const auto& k : detail::config_keys()) {
    if (key == k.name) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

/// Applies `key=value` lines on top of `config`. Blank lines and lines
/// starting with '#' are skipped.
inline void apply_config_text(RunConfig& config, std::string_view text) {
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(i + 1) + ": expected key=value");
    }
    try {
      set_config_value(config, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
}

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  apply_config_text(config, text);
  return config;
}

/// Every key with its effective value, in a fixed order.
inline std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += std::string(k.name) + "=" + k.get(config) + "\n";
  return out;
}

}  // namespace glpath

#endif  // GLPATH_RUN_CONFIG_HPP
