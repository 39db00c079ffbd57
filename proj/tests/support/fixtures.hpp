// Synthetic PPM fixtures: every class gets its own tint and stripe
// orientation, and each image adds seeded per-pixel noise.
#ifndef GLPATH_TESTS_FIXTURES_HPP
#define GLPATH_TESTS_FIXTURES_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "glpath/data.hpp"
#include "glpath/rng.hpp"
#include "glpath/train.hpp"

namespace glpath::testing {

struct PatternSpec {
  std::size_t size = 32;
  /// Standard deviation of per-pixel noise, in 8-bit units.
  double noise = 12.0;
  /// 1 keeps class tints fully apart; 0 makes every class the same grey.
  double separation = 1.0;
  /// Amplitude of the class stripe pattern, in 8-bit units.
  double stripe = 40.0;
};

inline constexpr double kTints[kNumClasses][3] = {
    {200, 60, 90},  {90, 60, 200}, {220, 160, 200}, {120, 200, 110}, {200, 190, 80}, {70, 170, 190},
};

inline Tensor<std::uint8_t> synthetic_image(std::size_t cls, const PatternSpec& spec,
                                            std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t s = spec.size;
  Tensor<std::uint8_t> img({3, s, s});
  // Orientation and period differ per class; the phase is random per image.
  const double angle = static_cast<double>(cls) * 3.14159265358979 / kNumClasses;
  const double period = 4.0 + static_cast<double>(cls % 3) * 2.0;
  const double phase = rng.uniform() * 6.28318530717959;
  const double cx = std::cos(angle), cy = std::sin(angle);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double wave = std::sin((cx * x + cy * y) * 6.28318530717959 / period + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double tint = 140.0 + spec.separation * (kTints[cls][c] - 140.0);
        double v = tint + spec.stripe * wave + spec.noise * rng.normal();
        v = std::clamp(std::round(v), 0.0, 255.0);
        img[(c * s + y) * s + x] = static_cast<std::uint8_t>(v);
      }
    }
  }
  return img;
}

struct LabeledImages {
  std::vector<Tensor<std::uint8_t>> images;
  std::vector<std::size_t> labels;
};

/// counts[k] images of class k, interleaved by class so that prefixes stay
/// roughly balanced.
inline LabeledImages synthetic_set(const std::vector<std::size_t>& counts, const PatternSpec& spec,
                                   std::uint64_t seed) {
  LabeledImages out;
  std::vector<std::size_t> made(counts.size(), 0);
  std::size_t remaining = 0;
  for (std::size_t c : counts) remaining += c;
  std::uint64_t serial = 0;
  while (remaining > 0) {
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (made[k] == counts[k]) continue;
      out.images.push_back(synthetic_image(k, spec, derive_seed(seed, serial++)));
      out.labels.push_back(k);
      ++made[k];
      --remaining;
    }
  }
  return out;
}

/// RGB-unit, standardized dataset using statistics of `stats_source`
/// (or of the set itself when null).
template <typename T>
Dataset<T> to_dataset(const LabeledImages& set, const NormalizationStats* stats_source = nullptr,
                      NormalizationStats* stats_out = nullptr) {
  std::vector<Tensor<T>> unit;
  unit.reserve(set.images.size());
  for (const auto& img : set.images) unit.push_back(to_rgb_unit<T>(img, false));
  const NormalizationStats stats =
      stats_source ? *stats_source : compute_norm_stats<T>(std::span<const Tensor<T>>(unit));
  if (stats_out) *stats_out = stats;
  for (auto& u : unit) u = normalize(u, stats);
  return stack_dataset<T>(unit, set.labels);
}

/// Writes the images as PPM files plus a `path,label` manifest; returns the
/// manifest path.
inline std::filesystem::path write_fixture(const std::filesystem::path& dir, const LabeledImages& set,
                                           const std::string& manifest_name = "manifest.csv") {
  std::filesystem::create_directories(dir / "images");
  std::string manifest = "path,label\n";
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const std::string rel = "images/" + std::string(class_name(set.labels[i])) + "_" +
                            std::to_string(i) + ".ppm";
    const auto bytes = encode_ppm(set.images[i]);
    std::ofstream(dir / rel, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    manifest += rel + "," + std::string(class_name(set.labels[i])) + "\n";
  }
  const auto path = dir / manifest_name;
  std::ofstream(path) << manifest;
  return path;
}

/// Small architecture for fast training on the 32x32 fixture.
inline ArchitectureConfig toy_architecture(std::size_t base_channels = 8) {
  ArchitectureConfig a;
  a.input_size = 32;
  a.base_channels = base_channels;
  a.include_stem_maxpool = false;
  return a;
}

}  // namespace glpath::testing

#endif  // GLPATH_TESTS_FIXTURES_HPP
