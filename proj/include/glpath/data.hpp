#ifndef GLPATH_DATA_HPP
#define GLPATH_DATA_HPP

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "glpath/error.hpp"
#include "glpath/rng.hpp"
#include "glpath/tensor.hpp"

namespace glpath {

// ---------------------------------------------------------------------------
// Label vocabulary

enum class HistologyClass : std::uint8_t { CT = 0, PN = 1, MP = 2, NC = 3, IC = 4, WM = 5 };

inline constexpr std::size_t kNumClasses = 6;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"CT", "PN", "MP",
                                                                         "NC", "IC", "WM"};

inline std::string_view class_name(HistologyClass c) {
  return kClassNames[static_cast<std::size_t>(c)];
}
inline std::string_view class_name(std::size_t index) { return kClassNames.at(index); }

inline std::optional<HistologyClass> parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return static_cast<HistologyClass>(i);
  }
  return std::nullopt;
}

inline std::size_t class_index(HistologyClass c) { return static_cast<std::size_t>(c); }

using ClassCounts = std::array<std::size_t, kNumClasses>;

// ---------------------------------------------------------------------------
// Manifest

struct PatchRecord {
  std::string image_path;
  HistologyClass label;

  friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<PatchRecord> records) : records_(std::move(records)) {
    for (const auto& r : records_) {
      if (r.image_path.empty()) throw DataError("manifest record with empty path");
      ++counts_[class_index(r.label)];
    }
  }

  const std::vector<PatchRecord>& records() const noexcept { return records_; }
  const PatchRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const ClassCounts& counts() const noexcept { return counts_; }

  Manifest subset(std::span<const std::size_t> indices) const {
    std::vector<PatchRecord> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(records_.at(i));
    return Manifest(std::move(out));
  }

  /// Indices of the records of each class, in manifest order.
  std::array<std::vector<std::size_t>, kNumClasses> class_indices() const {
    std::array<std::vector<std::size_t>, kNumClasses> out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      out[class_index(records_[i].label)].push_back(i);
    }
    return out;
  }

 private:
  std::vector<PatchRecord> records_;
  ClassCounts counts_{};
};

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parses `path,label` CSV (header required). Blank lines are skipped.
inline Manifest parse_manifest(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || detail::trim(lines[0]) != "path,label") {
    throw ParseError(1, "expected header 'path,label'");
  }
  std::vector<PatchRecord> records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (detail::trim(lines[i]).empty()) continue;
    const auto fields = detail::split_fields(lines[i]);
    if (fields.size() != 2) {
      throw ParseError(line_no, "expected 2 fields 'path,label', got " +
                                    std::to_string(fields.size()));
    }
    const std::string_view path = detail::trim(fields[0]);
    if (path.empty()) throw ParseError(line_no, "empty path");
    const std::string_view label = detail::trim(fields[1]);
    const auto cls = parse_class(label);
    if (!cls) throw ParseError(line_no, "unknown label '" + std::string(label) + "'");
    records.push_back({std::string(path), *cls});
  }
  return Manifest(std::move(records));
}

/// Image paths from either a `path` or a `path,label` CSV; labels, when
/// present, are not validated. Used for prediction inputs.
inline std::vector<std::string> parse_image_list(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw ParseError(1, "expected header 'path' or 'path,label'");
  const auto header = detail::trim(lines[0]);
  if (header != "path" && header != "path,label") {
    throw ParseError(1, "expected header 'path' or 'path,label'");
  }
  std::vector<std::string> paths;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto fields = detail::split_fields(lines[i]);
    const auto path = detail::trim(fields[0]);
    if (path.empty()) throw ParseError(i + 1, "empty path");
    paths.emplace_back(path);
  }
  return paths;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  try {
    return parse_manifest(read_text_file(path));
  } catch (const ParseError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Relative manifest paths are resolved against the manifest's directory.
inline std::filesystem::path resolve_image_path(const std::filesystem::path& manifest_path,
                                                const std::string& image_path) {
  const std::filesystem::path p(image_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255)

namespace detail {
class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  // Skips whitespace and '#' comments, then reads a decimal field.
  std::size_t read_number(const char* what) {
    skip_separators();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1u << 24)) throw ImageError(ImageErrorKind::BadHeader, std::string("PPM ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) {
      throw ImageError(pos_ >= bytes_.size() ? ImageErrorKind::Truncated : ImageErrorKind::BadHeader,
                       std::string("PPM header: missing ") + what);
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void read_raster_separator() {
    if (pos_ >= bytes_.size()) throw ImageError(ImageErrorKind::Truncated, "PPM header truncated");
    if (!is_space(bytes_[pos_])) {
      throw ImageError(ImageErrorKind::BadHeader, "PPM header: expected whitespace after maxval");
    }
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  }
  void skip_separators() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};
}  // namespace detail

/// Decodes a binary PPM into a channel-major 3 x H x W tensor, channels in
/// stored order.
inline Tensor<std::uint8_t> decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw ImageError(ImageErrorKind::BadMagic, "not a binary PPM: magic must be 'P6'");
  }
  detail::PpmHeaderReader reader(bytes);
  const std::size_t width = reader.read_number("width");
  const std::size_t height = reader.read_number("height");
  const std::size_t maxval = reader.read_number("maxval");
  if (width == 0 || height == 0) throw ImageError(ImageErrorKind::BadHeader, "PPM has zero extent");
  if (maxval != 255) {
    throw ImageError(ImageErrorKind::BadMaxval,
                     "PPM maxval " + std::to_string(maxval) + " unsupported, expected 255");
  }
  reader.read_raster_separator();
  const std::size_t offset = reader.position();
  const std::size_t needed = width * height * 3;
  if (bytes.size() - offset < needed) {
    throw ImageError(ImageErrorKind::Truncated, "PPM pixel data truncated: expected " +
                                                    std::to_string(needed) + " bytes, got " +
                                                    std::to_string(bytes.size() - offset));
  }
  Tensor<std::uint8_t> image({3, height, width});
  const std::size_t plane = height * width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) image[c * plane + p] = bytes[offset + p * 3 + c];
  }
  return image;
}

inline std::vector<std::uint8_t> encode_ppm(const Tensor<std::uint8_t>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode_ppm: expected 3 x H x W, got " + image.shape_string());
  }
  const std::size_t height = image.dim(1), width = image.dim(2), plane = height * width;
  const std::string header =
      "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) out.push_back(image[c * plane + p]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing: decode -> RGB in [0, 1] -> per-channel normalization

/// Divides by 255; swaps channels 0 and 2 when the source is BGR.
template <typename T>
Tensor<T> to_rgb_unit(const Tensor<std::uint8_t>& image, bool assume_bgr) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("to_rgb_unit: expected 3 x H x W, got " + image.shape_string());
  }
  const std::size_t plane = image.dim(1) * image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src = assume_bgr ? 2 - c : c;
    for (std::size_t p = 0; p < plane; ++p) {
      out[c * plane + p] = static_cast<T>(static_cast<double>(image[src * plane + p]) / 255.0);
    }
  }
  return out;
}

struct NormalizationStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

/// Per-channel mean and population std over every pixel of every image.
/// Reduction order is image order then pixel order.
template <typename T>
NormalizationStats compute_norm_stats(std::span<const Tensor<T>> images) {
  if (images.empty()) throw DataError("normalization stats need at least one image");
  std::array<double, 3> sum{}, count{};
  for (const auto& img : images) {
    if (img.rank() != 3 || img.dim(0) != 3) {
      throw ShapeError("compute_norm_stats: expected 3 x H x W, got " + img.shape_string());
    }
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) sum[c] += static_cast<double>(img[c * plane + p]);
      count[c] += static_cast<double>(plane);
    }
  }
  NormalizationStats stats;
  for (std::size_t c = 0; c < 3; ++c) stats.mean[c] = sum[c] / count[c];
  std::array<double, 3> sq{};
  for (const auto& img : images) {
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = static_cast<double>(img[c * plane + p]) - stats.mean[c];
        sq[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    stats.std[c] = std::sqrt(sq[c] / count[c]);
    if (!(stats.std[c] > 0.0)) {
      throw DataError("channel " + std::to_string(c) + " is constant over the training images");
    }
  }
  return stats;
}

template <typename T>
Tensor<T> normalize(const Tensor<T>& image, const NormalizationStats& stats) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("normalize: expected 3 x H x W, got " + image.shape_string());
  }
  const std::size_t plane = image.dim(1) * image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      out[c * plane + p] = static_cast<T>(
          (static_cast<double>(image[c * plane + p]) - stats.mean[c]) / stats.std[c]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> denormalize(const Tensor<T>& image, const NormalizationStats& stats) {
  const std::size_t plane = image.dim(1) * image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      out[c * plane + p] =
          static_cast<T>(static_cast<double>(image[c * plane + p]) * stats.std[c] + stats.mean[c]);
    }
  }
  return out;
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = detail::trim(s);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Six lines: three means then three stds.
inline std::string format_norm_stats(const NormalizationStats& stats) {
  std::string out;
  for (double m : stats.mean) out += format_double(m) + "\n";
  for (double s : stats.std) out += format_double(s) + "\n";
  return out;
}

inline NormalizationStats parse_norm_stats(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.size() != 6) {
    throw DataError("normalization stats file needs 6 lines, got " + std::to_string(lines.size()));
  }
  NormalizationStats stats;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto v = parse_double(lines[i]);
    if (!v) throw ParseError(i + 1, "not a number: '" + std::string(lines[i]) + "'");
    (i < 3 ? stats.mean[i] : stats.std[i - 3]) = *v;
  }
  for (double s : stats.std) {
    if (!(s > 0.0)) throw DataError("normalization std must be positive");
  }
  return stats;
}

/// Full preprocessing of one encoded image.
template <typename T>
Tensor<T> preprocess_image(std::span<const std::uint8_t> bytes, const NormalizationStats& stats,
                           bool assume_bgr) {
  return normalize(to_rgb_unit<T>(decode_ppm(bytes), assume_bgr), stats);
}

// ---------------------------------------------------------------------------
// Splits, folds, class weights

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per class, floor(ratio * n_k) records (at least 1, at most n_k - 1) go to
/// training, chosen by a seeded within-class shuffle. Both lists ascending.
inline SplitIndices stratified_split(const Manifest& manifest, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split ratio must lie in (0, 1), got " + format_double(ratio));
  }
  SplitIndices split;
  const auto by_class = manifest.class_indices();
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    auto indices = by_class[k];
    const std::size_t n = indices.size();
    if (n == 0) continue;
    if (n < 2) {
      throw DataError("class " + std::string(class_name(k)) + " has " + std::to_string(n) +
                      " record(s); stratified split needs at least 2");
    }
    std::size_t n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    Rng rng(derive_seed(seed, k));
    rng.shuffle(indices);
    split.train.insert(split.train.end(), indices.begin(), indices.begin() + n_train);
    split.val.insert(split.val.end(), indices.begin() + n_train, indices.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

enum class FoldScheme { Seeded, Contiguous };

inline std::string_view fold_scheme_name(FoldScheme s) {
  return s == FoldScheme::Seeded ? "seeded" : "contiguous";
}

inline std::optional<FoldScheme> parse_fold_scheme(std::string_view s) {
  if (s == "seeded") return FoldScheme::Seeded;
  if (s == "contiguous") return FoldScheme::Contiguous;
  return std::nullopt;
}

struct FoldAssignment {
  std::size_t fold_count = 0;
  std::vector<SplitIndices> folds;
};

/// Stratified k-fold: each class's indices (seeded shuffle, or manifest order
/// for the contiguous scheme) are cut into k runs whose sizes differ by at
/// most one, longer runs first; fold i validates on run i of every class.
inline FoldAssignment kfold_indices(const Manifest& manifest, std::size_t k, FoldScheme scheme,
                                    std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be >= 2, got " + std::to_string(k));
  FoldAssignment assignment{k, std::vector<SplitIndices>(k)};
  std::vector<std::size_t> fold_of(manifest.size(), 0);
  const auto by_class = manifest.class_indices();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto indices = by_class[c];
    const std::size_t n = indices.size();
    if (n == 0) continue;
    if (n < k) {
      throw DataError("class " + std::string(class_name(c)) + " has " + std::to_string(n) +
                      " record(s); " + std::to_string(k) + "-fold split needs at least " +
                      std::to_string(k));
    }
    if (scheme == FoldScheme::Seeded) {
      Rng rng(derive_seed(seed, c));
      rng.shuffle(indices);
    }
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t run = n / k + (f < n % k ? 1 : 0);
      for (std::size_t j = 0; j < run; ++j) fold_of[indices[pos++]] = f;
    }
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      (fold_of[i] == f ? assignment.folds[f].val : assignment.folds[f].train).push_back(i);
    }
  }
  return assignment;
}

/// Inverse-frequency weights w_k = N / (K * n_k); balanced counts give 1.
inline std::array<double, kNumClasses> class_weights(const ClassCounts& counts) {
  std::size_t total = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    if (counts[k] == 0) {
      throw DataError("class " + std::string(class_name(k)) +
                      " has no samples; class weights undefined");
    }
    total += counts[k];
  }
  std::array<double, kNumClasses> w{};
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    w[k] = static_cast<double>(total) / (static_cast<double>(kNumClasses) * static_cast<double>(counts[k]));
  }
  return w;
}

}  // namespace glpath

#endif  // GLPATH_DATA_HPP
